// SPDX-License-Identifier: Apache-2.0
#pragma once

// Serial reference implementations written as direct transcriptions of the
// definitions, kept independent of the main code paths. Tests compare the
// OpenMP kernels against these, and the benchmark times the two side by side.
// Nothing here is linked into the CLI.

#include "appo/frame_select.hpp"
#include "appo/objective.hpp"
#include "appo/policy.hpp"
#include "appo/reweight.hpp"

namespace appo::ref {

Mat frame_attention(const AttentionCapture& attn, const VisualLayout& layout, int last_n_layers);

std::vector<double> response_frame_score(const Mat& frame_attn, int k1);

/// Exhaustive enumeration of all k-subsets; picks the one with the largest
/// total score, lexicographically smallest on ties.
std::vector<int> focused_frames(const std::vector<double>& scores, int k2);

std::pair<std::vector<int>, std::vector<int>> union_focused(
    const RewardSplit& split, const std::vector<std::vector<int>>& per_response_frames);

std::vector<int> select_target_frames(const std::vector<int>& psi1,
                                      const std::vector<int>& psi2, Strategy strategy);

double kl_divergence(const TokenDistribution& p, const TokenDistribution& q, double eps = 1e-12);

PerceptionGroups build_perception_groups(const std::vector<Response>& responses,
                                         const TargetFrames& targets,
                                         const std::vector<FrameAttentionMatrix>& frame_attn,
                                         int k3);

SlotDivergence group_divergence(const PerceptionGroups& groups,
                                const std::vector<Response>& responses,
                                SlotReduction reduction);

double grpo_objective(const std::vector<std::vector<double>>& ratio_groups,
                      const std::vector<double>& advantages,
                      const std::vector<std::vector<double>>& kl_deltas, double clip_low,
                      double clip_high, double kl_coeff);

double dapo_objective(const std::vector<std::vector<double>>& ratio_groups,
                      const std::vector<double>& advantages, double clip_low, double clip_high);

double appo_objective(const std::vector<std::vector<double>>& ratio_groups,
                      const std::vector<double>& advantages,
                      const std::vector<std::vector<double>>& weights, double clip_low,
                      double clip_high);

/// Naive re-implementation of the policy forward pass (scalar loops, no shared
/// helpers); returns the logits for every position.
Mat forward_logits(const PolicyParams& params, const Mat& visual_tokens,
                   const std::vector<int>& seq);

}  // namespace appo::ref
