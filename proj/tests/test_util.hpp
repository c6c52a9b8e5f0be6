// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "appo/trace.hpp"

namespace appo::testutil {

inline TokenDistribution random_distribution(Prng& rng, int vocab) {
  TokenDistribution d;
  d.probs.resize(vocab);
  std::vector<double> logits(vocab);
  double mx = -1e300;
  for (int v = 0; v < vocab; ++v) {
    logits[v] = 2.0 * rng.normal();
    mx = std::max(mx, logits[v]);
  }
  double sum = 0.0;
  for (int v = 0; v < vocab; ++v) {
    d.probs[v] = std::exp(logits[v] - mx);
    sum += d.probs[v];
  }
  for (double& p : d.probs) p /= sum;
  return d;
}

inline Mat random_attention_rows(Prng& rng, int rows, int cols) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (int c = 0; c < cols; ++c) {
      m(r, c) = std::exp(rng.normal());
      sum += m(r, c);
    }
    for (int c = 0; c < cols; ++c) m(r, c) /= sum;
  }
  return m;
}

/// A structurally valid random rollout group.
inline RolloutGroup random_group(Prng& rng, int g, int frames, int vocab, int max_len,
                                 int layers) {
  RolloutGroup group;
  group.layout.num_frames = frames;
  group.layout.tokens_per_frame.resize(frames);
  for (int t = 0; t < frames; ++t) group.layout.tokens_per_frame[t] = 1 + rng.uniform_int(4);
  const int v_total = group.layout.total_tokens();

  for (int i = 0; i < g; ++i) {
    Response r;
    const int len = 1 + rng.uniform_int(max_len);
    for (int t = 0; t < len; ++t) {
      r.distributions.push_back(random_distribution(rng, vocab));
      const int tok = rng.uniform_int(vocab);
      r.tokens.push_back(tok);
      r.old_logprobs.push_back(std::log(r.distributions.back().probs[tok]));
    }
    for (int l = 0; l < layers; ++l)
      r.attention.layers.push_back(random_attention_rows(rng, len, v_total));
    group.responses.push_back(std::move(r));
    group.rewards.push_back(RewardBreakdown::make(rng.uniform_int(2), rng.uniform_int(2)));
  }
  group.task_meta = {{"id", static_cast<int>(rng.uniform_int(1000))}};
  return group;
}

}  // namespace appo::testutil
