// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "appo/trace.hpp"

namespace appo {

enum class Strategy { Hard, Soft, All };

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

/// Partition of response indices by splitting reward against the threshold.
struct RewardSplit {
  std::vector<int> high_set;  // indices with reward >= tau, ascending
  std::vector<int> low_set;   // remaining indices, ascending
  double tau = 0.0;
};

/// Per-response frame attention, shape |o_i| x T: entry (j, t) is the mean
/// attention of response token j onto frame t, averaged over the selected
/// layers and the frame's visual tokens.
struct FrameAttentionMatrix {
  Mat values;
};

/// Selected target frames with the intermediates that produced them.
struct TargetFrames {
  std::vector<int> frames;  // sorted, subset of [0, T)
  Strategy strategy = Strategy::Soft;
  std::vector<int> psi_s1;  // union over the high-reward set
  std::vector<int> psi_s2;  // union over the low-reward set
};

RewardSplit split_by_reward(const std::vector<double>& splitting_rewards, double tau);

/// Aggregates head-averaged attention over the last `last_n_layers` captured
/// layers and the tokens of each frame. The divisor is (layers * frame size).
FrameAttentionMatrix frame_attention(const AttentionCapture& attn, const VisualLayout& layout,
                                     int last_n_layers);

/// Per frame, the mean of the min(k1, |o_i|) largest column entries.
std::vector<double> response_frame_score(const FrameAttentionMatrix& fa, int k1);

/// The min(k2, T) frame indices with the highest scores; ties resolved toward
/// the lower frame index. Result is sorted ascending.
std::vector<int> focused_frames(const std::vector<double>& scores, int k2);

/// Unions of per-response focused-frame sets over each side of the split.
std::pair<std::vector<int>, std::vector<int>> union_focused(
    const RewardSplit& split, const std::vector<std::vector<int>>& per_response_frames);

/// Hard: psi1 \ psi2. Soft: psi1. All: psi1 u psi2. An empty result is legal
/// and downstream re-weighting degrades to all-ones weights.
TargetFrames select_target_frames(const std::vector<int>& psi1, const std::vector<int>& psi2,
                                  Strategy strategy);

}  // namespace appo
