// SPDX-License-Identifier: Apache-2.0
#include "appo/frame_select.hpp"

#include <algorithm>
#include <numeric>

namespace appo {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Hard: return "hard";
    case Strategy::Soft: return "soft";
    case Strategy::All: return "all";
  }
  return "?";
}

Strategy strategy_from_name(const std::string& name) {
  if (name == "hard") return Strategy::Hard;
  if (name == "soft") return Strategy::Soft;
  if (name == "all") return Strategy::All;
  throw ConfigError("unknown strategy: " + name);
}

RewardSplit split_by_reward(const std::vector<double>& splitting_rewards, double tau) {
  if (splitting_rewards.size() < 2) throw ConfigError("split needs at least 2 responses");
  if (!std::isfinite(tau)) throw ConfigError("tau must be finite");
  RewardSplit split;
  split.tau = tau;
  for (int i = 0; i < static_cast<int>(splitting_rewards.size()); ++i) {
    if (splitting_rewards[i] >= tau)
      split.high_set.push_back(i);
    else
      split.low_set.push_back(i);
  }
  return split;
}

FrameAttentionMatrix frame_attention(const AttentionCapture& attn, const VisualLayout& layout,
                                     int last_n_layers) {
  if (last_n_layers < 1) throw ConfigError("layer selector must be >= 1");
  const int captured = static_cast<int>(attn.layers.size());
  if (last_n_layers > captured)
    throw ConfigError("layer selector exceeds captured layers");
  const int v_total = layout.total_tokens();
  const int t_count = layout.num_frames;
  const int len = captured > 0 ? attn.layers[0].rows : 0;
  for (const Mat& m : attn.layers) {
    if (m.cols != v_total) throw ShapeError("attention width does not match layout");
    if (m.rows != len) throw ShapeError("attention layers have inconsistent row counts");
  }

  // Frame start offsets into the visual-token axis.
  std::vector<int> offset(t_count + 1, 0);
  for (int t = 0; t < t_count; ++t) offset[t + 1] = offset[t] + layout.tokens_per_frame[t];

  FrameAttentionMatrix fa;
  fa.values = Mat(len, t_count);
  const int first_layer = captured - last_n_layers;
  const double denom = static_cast<double>(last_n_layers);

#pragma omp parallel for schedule(static)
  for (int j = 0; j < len; ++j) {
    for (int t = 0; t < t_count; ++t) {
      double acc = 0.0;
      for (int h = first_layer; h < captured; ++h) {
        const double* row = attn.layers[h].row(j);
        for (int v = offset[t]; v < offset[t + 1]; ++v) acc += row[v];
      }
      fa.values(j, t) = acc / (denom * layout.tokens_per_frame[t]);
    }
  }
  return fa;
}

namespace {

/// Indices of the min(k, n) largest values, ties toward the lower index,
/// ordered by descending value (then ascending index).
std::vector<int> top_k_indices(const double* values, int n, int k) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const int take = std::min(k, n);
  std::partial_sort(idx.begin(), idx.begin() + take, idx.end(), [&](int a, int b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return a < b;
  });
  idx.resize(take);
  return idx;
}

std::vector<int> set_union(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

}  // namespace

std::vector<double> response_frame_score(const FrameAttentionMatrix& fa, int k1) {
  if (k1 < 1) throw ConfigError("k1 must be >= 1");
  const int len = fa.values.rows;
  const int t_count = fa.values.cols;
  std::vector<double> scores(t_count, 0.0);
  std::vector<double> column(len);
  const int take = std::min(k1, len);
  for (int t = 0; t < t_count; ++t) {
    for (int j = 0; j < len; ++j) column[j] = fa.values(j, t);
    std::partial_sort(column.begin(), column.begin() + take, column.end(),
                      std::greater<double>());
    double acc = 0.0;
    for (int j = 0; j < take; ++j) acc += column[j];
    scores[t] = acc / take;
  }
  return scores;
}

std::vector<int> focused_frames(const std::vector<double>& scores, int k2) {
  if (k2 < 1) throw ConfigError("k2 must be >= 1");
  std::vector<int> idx =
      top_k_indices(scores.data(), static_cast<int>(scores.size()), k2);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::pair<std::vector<int>, std::vector<int>> union_focused(
    const RewardSplit& split, const std::vector<std::vector<int>>& per_response_frames) {
  const int g = static_cast<int>(per_response_frames.size());
  if (static_cast<int>(split.high_set.size() + split.low_set.size()) != g)
    throw ShapeError("split does not cover the per-response frame sets");
  std::vector<int> psi1, psi2;
  for (int i : split.high_set) psi1 = set_union(psi1, per_response_frames[i]);
  for (int i : split.low_set) psi2 = set_union(psi2, per_response_frames[i]);
  return {psi1, psi2};
}

TargetFrames select_target_frames(const std::vector<int>& psi1, const std::vector<int>& psi2,
                                  Strategy strategy) {
  TargetFrames out;
  out.strategy = strategy;
  out.psi_s1 = psi1;
  out.psi_s2 = psi2;
  switch (strategy) {
    case Strategy::Hard:
      std::set_difference(psi1.begin(), psi1.end(), psi2.begin(), psi2.end(),
                          std::back_inserter(out.frames));
      break;
    case Strategy::Soft:
      out.frames = psi1;
      break;
    case Strategy::All:
      out.frames = set_union(psi1, psi2);
      break;
  }
  return out;
}

}  // namespace appo
