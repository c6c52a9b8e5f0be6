// SPDX-License-Identifier: Apache-2.0
#include "appo/reweight.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace appo {

SlotReduction slot_reduction_from_name(const std::string& name) {
  if (name == "per_slot") return SlotReduction::PerSlot;
  if (name == "per_token") return SlotReduction::PerToken;
  throw ConfigError("unknown slot reduction: " + name);
}

WeightAveraging weight_averaging_from_name(const std::string& name) {
  if (name == "membership") return WeightAveraging::Membership;
  if (name == "literal_1_over_K" || name == "literal_1_over_k")
    return WeightAveraging::Literal1OverK;
  throw ConfigError("unknown weight averaging: " + name);
}

const char* slot_reduction_name(SlotReduction r) {
  return r == SlotReduction::PerSlot ? "per_slot" : "per_token";
}

const char* weight_averaging_name(WeightAveraging w) {
  return w == WeightAveraging::Membership ? "membership" : "literal_1_over_K";
}

double kl_divergence(const TokenDistribution& p, const TokenDistribution& q, double eps) {
  if (p.probs.size() != q.probs.size())
    throw ShapeError("KL divergence on distributions of different sizes");
  if (eps <= 0.0) throw ConfigError("KL smoothing eps must be > 0");
  double kl = 0.0;
  for (size_t v = 0; v < p.probs.size(); ++v)
    kl += p.probs[v] * std::log((p.probs[v] + eps) / (q.probs[v] + eps));
  return kl < 0.0 ? 0.0 : kl;
}

PerceptionGroups build_perception_groups(const std::vector<Response>& responses,
                                         const TargetFrames& targets,
                                         const std::vector<FrameAttentionMatrix>& frame_attn,
                                         int k3) {
  if (k3 < 1) throw ConfigError("k3 must be >= 1");
  if (frame_attn.size() != responses.size())
    throw ShapeError("frame attention count does not match responses");
  for (size_t i = 0; i < responses.size(); ++i)
    if (frame_attn[i].values.rows != responses[i].length())
      throw ShapeError("frame attention rows do not match response length");

  PerceptionGroups out;
  out.groups.resize(targets.frames.size());

#pragma omp parallel for schedule(static)
  for (int k = 0; k < static_cast<int>(targets.frames.size()); ++k) {
    const int frame = targets.frames[k];
    PerceptionGroups::Group& g = out.groups[k];
    g.frame_index = frame;
    g.slots.resize(responses.size());
    for (size_t i = 0; i < responses.size(); ++i) {
      const Mat& fa = frame_attn[i].values;
      const int len = fa.rows;
      std::vector<int> idx(len);
      std::iota(idx.begin(), idx.end(), 0);
      const int take = std::min(k3, len);
      std::partial_sort(idx.begin(), idx.begin() + take, idx.end(), [&](int a, int b) {
        if (fa(a, frame) != fa(b, frame)) return fa(a, frame) > fa(b, frame);
        return a < b;
      });
      idx.resize(take);
      g.slots[i] = std::move(idx);
    }
  }
  return out;
}

SlotDivergence group_divergence(const PerceptionGroups& groups,
                                const std::vector<Response>& responses,
                                SlotReduction reduction) {
  SlotDivergence div;
  div.reduction = reduction;
  div.groups.resize(groups.groups.size());
  const int g_count = static_cast<int>(responses.size());

#pragma omp parallel for schedule(static)
  for (int k = 0; k < groups.group_count(); ++k) {
    const PerceptionGroups::Group& grp = groups.groups[k];
    SlotDivergence::GroupValues& out = div.groups[k];
    out.residents = g_count;
    int slots = std::numeric_limits<int>::max();
    for (const std::vector<int>& s : grp.slots) slots = std::min(slots, static_cast<int>(s.size()));
    if (grp.slots.empty() || slots == std::numeric_limits<int>::max()) slots = 0;
    out.slot_count = slots;
    out.values.assign(reduction == SlotReduction::PerSlot
                          ? static_cast<size_t>(slots)
                          : static_cast<size_t>(slots) * g_count,
                      0.0);
    if (g_count < 2) continue;

    std::vector<double> mean;
    for (int j = 0; j < slots; ++j) {
      const size_t vocab = responses[0].distributions[0].probs.size();
      mean.assign(vocab, 0.0);
      for (int i = 0; i < g_count; ++i) {
        const TokenDistribution& p = responses[i].distributions[grp.slots[i][j]];
        for (size_t v = 0; v < vocab; ++v) mean[v] += p.probs[v];
      }
      for (double& m : mean) m /= g_count;
      TokenDistribution mean_dist;
      mean_dist.probs = mean;

      if (reduction == SlotReduction::PerSlot) {
        double acc = 0.0;
        for (int i = 0; i < g_count; ++i)
          acc += kl_divergence(responses[i].distributions[grp.slots[i][j]], mean_dist);
        out.values[j] = acc;
      } else {
        for (int i = 0; i < g_count; ++i)
          out.values[static_cast<size_t>(j) * g_count + i] =
              kl_divergence(responses[i].distributions[grp.slots[i][j]], mean_dist);
      }
    }
  }
  return div;
}

SlotDivergence minmax_normalize(const SlotDivergence& raw) {
  SlotDivergence out = raw;
  for (SlotDivergence::GroupValues& g : out.groups) {
    if (g.values.empty()) continue;
    double lo = g.values[0], hi = g.values[0];
    for (double v : g.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi == lo) {
      std::fill(g.values.begin(), g.values.end(), 0.0);
    } else {
      for (double& v : g.values) v = (v - lo) / (hi - lo);
    }
  }
  return out;
}

TokenWeightMap token_weights(const PerceptionGroups& groups, const SlotDivergence& normalized,
                             double alpha, const std::vector<int>& lengths,
                             WeightAveraging averaging) {
  if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
  TokenWeightMap map;
  map.weights.resize(lengths.size());
  map.membership_count.resize(lengths.size());
  map.cumulative_intensity.resize(lengths.size());
  for (size_t i = 0; i < lengths.size(); ++i) {
    map.weights[i].assign(lengths[i], 1.0);
    map.membership_count[i].assign(lengths[i], 0);
    map.cumulative_intensity[i].assign(lengths[i], 0.0);
  }

  // Accumulation runs in ascending (k, j, i) order so repeated runs reduce in
  // the same floating-point order.
  for (int k = 0; k < groups.group_count(); ++k) {
    const PerceptionGroups::Group& grp = groups.groups[k];
    const int slots = normalized.groups[k].slot_count;
    for (int j = 0; j < slots; ++j) {
      for (int i = 0; i < static_cast<int>(grp.slots.size()); ++i) {
        const int pos = grp.slots[i][j];
        map.membership_count[i][pos] += 1;
        map.cumulative_intensity[i][pos] += normalized.value_at(k, j, i);
      }
    }
  }

  const int total_groups = groups.group_count();
  for (size_t i = 0; i < lengths.size(); ++i) {
    for (int t = 0; t < lengths[i]; ++t) {
      const int count = map.membership_count[i][t];
      if (count == 0) continue;
      const double divisor =
          averaging == WeightAveraging::Membership ? count : total_groups;
      map.weights[i][t] = 1.0 + alpha * (map.cumulative_intensity[i][t] / divisor);
    }
  }
  return map;
}

TokenWeightMap unit_weights(const std::vector<int>& lengths) {
  TokenWeightMap map;
  map.weights.resize(lengths.size());
  map.membership_count.resize(lengths.size());
  map.cumulative_intensity.resize(lengths.size());
  for (size_t i = 0; i < lengths.size(); ++i) {
    map.weights[i].assign(lengths[i], 1.0);
    map.membership_count[i].assign(lengths[i], 0);
    map.cumulative_intensity[i].assign(lengths[i], 0.0);
  }
  return map;
}

}  // namespace appo
