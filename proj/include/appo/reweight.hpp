// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "appo/frame_select.hpp"
#include "appo/trace.hpp"

namespace appo {

/// How the slot-wise divergence is reduced across a group's responses.
/// PerSlot sums the KL terms over responses (one value shared by the slot);
/// PerToken keeps each response's own KL term.
enum class SlotReduction { PerSlot, PerToken };

/// How tokens that sit in several groups combine their intensities:
/// Membership averages over the groups the token actually belongs to;
/// Literal1OverK divides the accumulated sum by the total group count K.
enum class WeightAveraging { Membership, Literal1OverK };

SlotReduction slot_reduction_from_name(const std::string& name);
WeightAveraging weight_averaging_from_name(const std::string& name);
const char* slot_reduction_name(SlotReduction r);
const char* weight_averaging_name(WeightAveraging w);

/// The intra-group perception token structure: one group per target frame,
/// holding for each response its token positions ranked by attention to that
/// frame (descending, ties toward the lower position).
struct PerceptionGroups {
  struct Group {
    int frame_index = 0;
    std::vector<std::vector<int>> slots;  // per response, up to k3 positions
  };
  std::vector<Group> groups;  // ordered by ascending frame index

  int group_count() const { return static_cast<int>(groups.size()); }
};

/// Slot-wise divergence values, raw or normalized. For PerSlot, values[k] has
/// one entry per slot; for PerToken it is row-major (slot, response).
struct SlotDivergence {
  SlotReduction reduction = SlotReduction::PerSlot;
  struct GroupValues {
    int slot_count = 0;  // J: slots shared by all responses in the group
    int residents = 0;   // G: responses contributing to each slot
    std::vector<double> values;
  };
  std::vector<GroupValues> groups;

  double value_at(int k, int slot, int resp) const {
    const GroupValues& g = groups[k];
    return reduction == SlotReduction::PerSlot ? g.values[slot]
                                               : g.values[static_cast<size_t>(slot) * g.residents + resp];
  }
};

/// Per-token weight map. weights[i][t] is in [1, 1+alpha]; tokens in no group
/// carry exactly 1.
struct TokenWeightMap {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<int>> membership_count;
  std::vector<std::vector<double>> cumulative_intensity;
};

/// Smoothed KL divergence sum_v p_v ln((p_v+eps)/(q_v+eps)), clamped at 0.
double kl_divergence(const TokenDistribution& p, const TokenDistribution& q, double eps = 1e-12);

/// Builds the perception-token groups for the selected target frames from the
/// per-response frame-attention matrices.
PerceptionGroups build_perception_groups(const std::vector<Response>& responses,
                                         const TargetFrames& targets,
                                         const std::vector<FrameAttentionMatrix>& frame_attn,
                                         int k3);

/// Raw slot divergence: per group and slot, the responses' distributions are
/// averaged and each response's KL against that mean is taken. Slot range is
/// truncated to the shortest slot list in the group; a slot with fewer than
/// two contributors has divergence 0.
SlotDivergence group_divergence(const PerceptionGroups& groups,
                                const std::vector<Response>& responses,
                                SlotReduction reduction = SlotReduction::PerSlot);

/// Per-group min-max normalization to [0,1]; a degenerate group (max == min)
/// maps to all zeros so the weights fall back to 1.
SlotDivergence minmax_normalize(const SlotDivergence& raw);

/// Final weights: 1 + alpha * (accumulated intensity / divisor), where the
/// divisor is the token's membership count or the literal group count K.
TokenWeightMap token_weights(const PerceptionGroups& groups, const SlotDivergence& normalized,
                             double alpha, const std::vector<int>& lengths,
                             WeightAveraging averaging = WeightAveraging::Membership);

/// All-ones weight map for the given response lengths.
TokenWeightMap unit_weights(const std::vector<int>& lengths);

}  // namespace appo
