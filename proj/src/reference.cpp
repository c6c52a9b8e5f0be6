// SPDX-License-Identifier: Apache-2.0
#include "appo/reference.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace appo::ref {

Mat frame_attention(const AttentionCapture& attn, const VisualLayout& layout,
                    int last_n_layers) {
  const std::vector<int> frame_of = layout.frame_of_token();
  const int layers = static_cast<int>(attn.layers.size());
  const int len = attn.layers.at(0).rows;
  Mat out(len, layout.num_frames);
  for (int j = 0; j < len; ++j) {
    for (int t = 0; t < layout.num_frames; ++t) {
      double sum = 0.0;
      for (int h = layers - last_n_layers; h < layers; ++h)
        for (int v = 0; v < static_cast<int>(frame_of.size()); ++v)
          if (frame_of[v] == t) sum += attn.layers[h](j, v);
      out(j, t) = sum / (last_n_layers * layout.tokens_per_frame[t]);
    }
  }
  return out;
}

std::vector<double> response_frame_score(const Mat& frame_attn, int k1) {
  std::vector<double> scores(frame_attn.cols);
  for (int t = 0; t < frame_attn.cols; ++t) {
    std::vector<double> col;
    for (int j = 0; j < frame_attn.rows; ++j) col.push_back(frame_attn(j, t));
    std::sort(col.begin(), col.end());
    std::reverse(col.begin(), col.end());
    const int take = std::min<int>(k1, static_cast<int>(col.size()));
    double sum = 0.0;
    for (int j = 0; j < take; ++j) sum += col[j];
    scores[t] = sum / take;
  }
  return scores;
}

namespace {

void enumerate_subsets(int n, int k, int start, std::vector<int>& cur,
                       const std::vector<double>& scores, double& best_sum,
                       std::vector<int>& best) {
  if (static_cast<int>(cur.size()) == k) {
    double sum = 0.0;
    for (int i : cur) sum += scores[i];
    // strict improvement keeps the lexicographically first subset on ties
    if (sum > best_sum) {
      best_sum = sum;
      best = cur;
    }
    return;
  }
  for (int i = start; i < n; ++i) {
    cur.push_back(i);
    enumerate_subsets(n, k, i + 1, cur, scores, best_sum, best);
    cur.pop_back();
  }
}

}  // namespace

std::vector<int> focused_frames(const std::vector<double>& scores, int k2) {
  const int n = static_cast<int>(scores.size());
  const int k = std::min(k2, n);
  std::vector<int> cur, best;
  double best_sum = -1e300;
  enumerate_subsets(n, k, 0, cur, scores, best_sum, best);
  return best;
}

std::pair<std::vector<int>, std::vector<int>> union_focused(
    const RewardSplit& split, const std::vector<std::vector<int>>& per_response_frames) {
  std::set<int> s1, s2;
  for (int i : split.high_set)
    for (int f : per_response_frames[i]) s1.insert(f);
  for (int i : split.low_set)
    for (int f : per_response_frames[i]) s2.insert(f);
  return {std::vector<int>(s1.begin(), s1.end()), std::vector<int>(s2.begin(), s2.end())};
}

std::vector<int> select_target_frames(const std::vector<int>& psi1,
                                      const std::vector<int>& psi2, Strategy strategy) {
  std::set<int> a(psi1.begin(), psi1.end());
  std::set<int> b(psi2.begin(), psi2.end());
  std::set<int> out;
  switch (strategy) {
    case Strategy::Hard:
      for (int f : a)
        if (!b.count(f)) out.insert(f);
      break;
    case Strategy::Soft:
      out = a;
      break;
    case Strategy::All:
      out = a;
      out.insert(b.begin(), b.end());
      break;
  }
  return std::vector<int>(out.begin(), out.end());
}

double kl_divergence(const TokenDistribution& p, const TokenDistribution& q, double eps) {
  // log-sum form rather than the log-ratio form used by the implementation
  double lhs = 0.0, rhs = 0.0;
  for (size_t v = 0; v < p.probs.size(); ++v) {
    lhs += p.probs[v] * std::log(p.probs[v] + eps);
    rhs += p.probs[v] * std::log(q.probs[v] + eps);
  }
  return std::max(0.0, lhs - rhs);
}

PerceptionGroups build_perception_groups(const std::vector<Response>& responses,
                                         const TargetFrames& targets,
                                         const std::vector<FrameAttentionMatrix>& frame_attn,
                                         int k3) {
  PerceptionGroups out;
  for (int frame : targets.frames) {
    PerceptionGroups::Group g;
    g.frame_index = frame;
    for (size_t i = 0; i < responses.size(); ++i) {
      // stable sort over (value desc, position asc) pairs
      std::vector<std::pair<double, int>> ranked;
      for (int j = 0; j < frame_attn[i].values.rows; ++j)
        ranked.push_back({-frame_attn[i].values(j, frame), j});
      std::sort(ranked.begin(), ranked.end());
      std::vector<int> slots;
      for (int j = 0; j < std::min<int>(k3, static_cast<int>(ranked.size())); ++j)
        slots.push_back(ranked[j].second);
      g.slots.push_back(std::move(slots));
    }
    out.groups.push_back(std::move(g));
  }
  return out;
}

SlotDivergence group_divergence(const PerceptionGroups& groups,
                                const std::vector<Response>& responses,
                                SlotReduction reduction) {
  SlotDivergence div;
  div.reduction = reduction;
  const int g_count = static_cast<int>(responses.size());
  for (const PerceptionGroups::Group& grp : groups.groups) {
    SlotDivergence::GroupValues out;
    out.residents = g_count;
    int slots = grp.slots.empty() ? 0 : static_cast<int>(grp.slots[0].size());
    for (const std::vector<int>& s : grp.slots)
      slots = std::min(slots, static_cast<int>(s.size()));
    out.slot_count = slots;
    for (int j = 0; j < slots; ++j) {
      TokenDistribution mean;
      mean.probs.assign(responses[0].distributions[0].probs.size(), 0.0);
      for (int i = 0; i < g_count; ++i) {
        const std::vector<double>& p = responses[i].distributions[grp.slots[i][j]].probs;
        for (size_t v = 0; v < p.size(); ++v) mean.probs[v] += p[v];
      }
      for (double& m : mean.probs) m /= g_count;
      if (reduction == SlotReduction::PerSlot) {
        double acc = 0.0;
        if (g_count >= 2)
          for (int i = 0; i < g_count; ++i)
            acc += ref::kl_divergence(responses[i].distributions[grp.slots[i][j]], mean);
        out.values.push_back(acc);
      } else {
        for (int i = 0; i < g_count; ++i)
          out.values.push_back(
              g_count >= 2
                  ? ref::kl_divergence(responses[i].distributions[grp.slots[i][j]], mean)
                  : 0.0);
      }
    }
    div.groups.push_back(std::move(out));
  }
  return div;
}

namespace {

double clip_term(double ratio, double coeff, double clip_low, double clip_high) {
  double clipped = ratio;
  if (clipped < 1.0 - clip_low) clipped = 1.0 - clip_low;
  if (clipped > 1.0 + clip_high) clipped = 1.0 + clip_high;
  return std::min(ratio * coeff, clipped * coeff);
}

}  // namespace

double grpo_objective(const std::vector<std::vector<double>>& ratio_groups,
                      const std::vector<double>& advantages,
                      const std::vector<std::vector<double>>& kl_deltas, double clip_low,
                      double clip_high, double kl_coeff) {
  double obj = 0.0;
  const int g = static_cast<int>(ratio_groups.size());
  for (int i = 0; i < g; ++i) {
    double inner = 0.0;
    for (size_t t = 0; t < ratio_groups[i].size(); ++t) {
      const double d = kl_deltas[i][t];
      inner += clip_term(ratio_groups[i][t], advantages[i], clip_low, clip_high) -
               kl_coeff * (std::exp(d) - d - 1.0);
    }
    obj += inner / ratio_groups[i].size();
  }
  return obj / g;
}

double dapo_objective(const std::vector<std::vector<double>>& ratio_groups,
                      const std::vector<double>& advantages, double clip_low,
                      double clip_high) {
  double obj = 0.0;
  long total = 0;
  for (size_t i = 0; i < ratio_groups.size(); ++i) {
    for (size_t t = 0; t < ratio_groups[i].size(); ++t) {
      obj += clip_term(ratio_groups[i][t], advantages[i], clip_low, clip_high);
      ++total;
    }
  }
  return total > 0 ? obj / total : 0.0;
}

double appo_objective(const std::vector<std::vector<double>>& ratio_groups,
                      const std::vector<double>& advantages,
                      const std::vector<std::vector<double>>& weights, double clip_low,
                      double clip_high) {
  double obj = 0.0;
  long total = 0;
  for (size_t i = 0; i < ratio_groups.size(); ++i) {
    for (size_t t = 0; t < ratio_groups[i].size(); ++t) {
      obj += clip_term(ratio_groups[i][t], weights[i][t] * advantages[i], clip_low,
                       clip_high);
      ++total;
    }
  }
  return total > 0 ? obj / total : 0.0;
}

Mat forward_logits(const PolicyParams& params, const Mat& visual_tokens,
                   const std::vector<int>& seq) {
  const ModelConfig& cfg = params.cfg;
  const int n = static_cast<int>(seq.size());
  const int d = cfg.embed_dim;
  const int dh = cfg.embed_dim / cfg.num_heads;
  const int vcount = visual_tokens.rows;
  const double eps = 1e-8;

  auto norm_row = [&](const std::vector<double>& x) {
    double m = 0.0;
    for (double v : x) m += v * v;
    m = std::sqrt(m / static_cast<double>(x.size()) + eps);
    std::vector<double> y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] / m;
    return y;
  };
  auto apply = [&](const std::vector<double>& x, const Mat& w) {
    std::vector<double> y(w.cols, 0.0);
    for (int i = 0; i < w.rows; ++i)
      for (int j = 0; j < w.cols; ++j) y[j] += x[i] * w(i, j);
    return y;
  };

  // embeddings with sinusoidal positions
  std::vector<std::vector<double>> x(n, std::vector<double>(d));
  for (int p = 0; p < n; ++p) {
    for (int j = 0; j < d; ++j) x[p][j] = params.tok_emb(seq[p], j);
    for (int j = 0; j < d; j += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(j) / d);
      x[p][j] += std::sin(p * freq);
      if (j + 1 < d) x[p][j + 1] += std::cos(p * freq);
    }
  }

  // projected visual tokens
  std::vector<std::vector<double>> visemb(vcount, std::vector<double>(d, 0.0));
  for (int u = 0; u < vcount; ++u)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) visemb[u][j] += visual_tokens(u, i) * params.vis_proj(i, j);

  for (const LayerParams& lp : params.layers) {
    // self-attention
    std::vector<std::vector<double>> q(n), k(n), v(n);
    for (int p = 0; p < n; ++p) {
      std::vector<double> nx = norm_row(x[p]);
      q[p] = apply(nx, lp.wq);
      k[p] = apply(nx, lp.wk);
      v[p] = apply(nx, lp.wv);
    }
    for (int p = 0; p < n; ++p) {
      std::vector<double> ctx(d, 0.0);
      for (int h = 0; h < cfg.num_heads; ++h) {
        std::vector<double> sc(p + 1);
        double mx = -1e300;
        for (int t = 0; t <= p; ++t) {
          double s = 0.0;
          for (int j = 0; j < dh; ++j) s += q[p][h * dh + j] * k[t][h * dh + j];
          sc[t] = s / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, sc[t]);
        }
        double z = 0.0;
        for (int t = 0; t <= p; ++t) z += std::exp(sc[t] - mx);
        for (int t = 0; t <= p; ++t) {
          const double a = std::exp(sc[t] - mx) / z;
          for (int j = 0; j < dh; ++j) ctx[h * dh + j] += a * v[t][h * dh + j];
        }
      }
      std::vector<double> sa = apply(ctx, lp.wo);
      for (int j = 0; j < d; ++j) x[p][j] += sa[j];
    }

    // cross-attention
    std::vector<std::vector<double>> kv(vcount), vv(vcount);
    for (int u = 0; u < vcount; ++u) {
      kv[u] = apply(visemb[u], lp.ck);
      vv[u] = apply(visemb[u], lp.cv);
    }
    for (int p = 0; p < n; ++p) {
      std::vector<double> cqv = apply(norm_row(x[p]), lp.cq);
      std::vector<double> ctx(d, 0.0);
      for (int h = 0; h < cfg.num_heads; ++h) {
        std::vector<double> sc(vcount);
        double mx = -1e300;
        for (int u = 0; u < vcount; ++u) {
          double s = 0.0;
          for (int j = 0; j < dh; ++j) s += cqv[h * dh + j] * kv[u][h * dh + j];
          sc[u] = s / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, sc[u]);
        }
        double z = 0.0;
        for (int u = 0; u < vcount; ++u) z += std::exp(sc[u] - mx);
        for (int u = 0; u < vcount; ++u) {
          const double a = std::exp(sc[u] - mx) / z;
          for (int j = 0; j < dh; ++j) ctx[h * dh + j] += a * vv[u][h * dh + j];
        }
      }
      std::vector<double> ca = apply(ctx, lp.co);
      for (int j = 0; j < d; ++j) x[p][j] += ca[j];
    }

    // feed-forward
    for (int p = 0; p < n; ++p) {
      std::vector<double> pre = apply(norm_row(x[p]), lp.w1);
      for (double& a : pre) a = std::tanh(a);
      std::vector<double> out = apply(pre, lp.w2);
      for (int j = 0; j < d; ++j) x[p][j] += out[j];
    }
  }

  Mat logits(n, cfg.vocab_size);
  for (int p = 0; p < n; ++p) {
    std::vector<double> row = apply(norm_row(x[p]), params.out_proj);
    for (int v2 = 0; v2 < cfg.vocab_size; ++v2) logits(p, v2) = row[v2];
  }
  return logits;
}

}  // namespace appo::ref
