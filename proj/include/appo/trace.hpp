// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "appo/common.hpp"
#include "json.hpp"

namespace appo {

inline constexpr const char* kTraceSchema = "appo-trace/1";

/// Frame/visual-token geometry: which visual-token index belongs to which frame.
struct VisualLayout {
  int num_frames = 0;                 // T
  std::vector<int> tokens_per_frame;  // |f_t| per frame

  int total_tokens() const {
    int v = 0;
    for (int n : tokens_per_frame) v += n;
    return v;
  }

  /// Expanded mapping: visual-token index -> frame index.
  std::vector<int> frame_of_token() const {
    std::vector<int> map;
    map.reserve(total_tokens());
    for (int t = 0; t < static_cast<int>(tokens_per_frame.size()); ++t)
      for (int k = 0; k < tokens_per_frame[t]; ++k) map.push_back(t);
    return map;
  }
};

/// Full next-token distribution over the vocabulary.
struct TokenDistribution {
  std::vector<double> probs;
};

/// Head-averaged attention from response tokens to visual tokens, one matrix
/// per captured layer, each of shape (response length) x V.
struct AttentionCapture {
  std::vector<Mat> layers;
};

/// One sampled response together with everything captured at sampling time.
struct Response {
  std::vector<int> tokens;
  std::vector<double> old_logprobs;
  std::vector<TokenDistribution> distributions;
  AttentionCapture attention;

  int length() const { return static_cast<int>(tokens.size()); }
};

struct RewardBreakdown {
  int accuracy = 0;  // {0,1}
  int format = 0;    // {0,1}
  double combined = 0.0;

  static RewardBreakdown make(int acc, int fmt) {
    RewardBreakdown r;
    r.accuracy = acc;
    r.format = fmt;
    r.combined = 0.9 * acc + 0.1 * fmt;
    return r;
  }
};

/// The unit the training step operates on: G responses for one task instance.
/// task_meta carries evaluation-only ground truth; the selection, weighting and
/// objective code paths take layout/responses/rewards and never see it.
struct RolloutGroup {
  VisualLayout layout;
  std::vector<Response> responses;
  std::vector<RewardBreakdown> rewards;
  nlohmann::ordered_json task_meta = nlohmann::ordered_json::object();

  int group_size() const { return static_cast<int>(responses.size()); }
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

/// Checks every structural invariant of a rollout group and reports each
/// violation with its location. Never mutates the input.
ValidationReport validate_group(const RolloutGroup& group);

/// Line-delimited JSON, one group per line, schema "appo-trace/1". Floating
/// values are rendered with shortest round-trip decimals, so
/// read_trace(write_trace(x)) == x bit for bit.
void write_trace(const std::vector<RolloutGroup>& groups, std::ostream& out);
std::vector<RolloutGroup> read_trace(std::istream& in);

void write_trace_file(const std::vector<RolloutGroup>& groups, const std::string& path);
std::vector<RolloutGroup> read_trace_file(const std::string& path);

/// Appends groups to an already-open trace stream (same format as write_trace).
void append_trace(const std::vector<RolloutGroup>& groups, std::ostream& out);

nlohmann::ordered_json group_to_json(const RolloutGroup& group);
RolloutGroup group_from_json(const nlohmann::ordered_json& j);

/// Shannon entropy -sum p ln p with 0 ln 0 := 0. Result in [0, ln(vocab)].
double token_entropy(const TokenDistribution& d);

}  // namespace appo
