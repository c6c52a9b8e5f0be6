// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "appo/frame_select.hpp"
#include "appo/trace.hpp"

namespace appo {

/// Synthetic video-question task generator. Each instance plants one crucial
/// frame whose tokens carry a cue direction plus the answer's signature
/// direction; at least one distractor frame carries a conflicting signature.
/// Reading the cue frame and decoding its signature solves the task.
struct GeneratorConfig {
  int num_frames = 8;        // T
  int tokens_per_frame = 4;
  int answer_alphabet = 4;   // answer token ids are 1..answer_alphabet
  double snr = 4.0;          // signature scale over unit Gaussian noise
  std::uint64_t seed = 0;
  int embed_dim = 32;        // width of the visual-token vectors
  int vocab_size = 32;

  void validate() const;
};

struct TaskInstance {
  VisualLayout layout;
  Mat visual_tokens;  // V x embed_dim
  std::vector<int> question_tokens;
  int crucial_frame = 0;
  int answer_token = 0;
  std::vector<int> distractor_frames;
};

/// Token protocol: the model answers by emitting the tag token followed by one
/// answer-alphabet token.
inline constexpr int kAnswerTag = 0;

bool is_answer_token(int token, int alphabet);

/// True once the response ends with (tag, answer-alphabet token); used as the
/// sampling terminator.
bool is_complete_answer(const std::vector<int>& response_tokens, int alphabet);

/// Deterministic in (cfg.seed, index).
TaskInstance generate(const GeneratorConfig& cfg, std::uint64_t index);

/// accuracy: the token after the final tag equals the instance's answer.
/// format: exactly one tag, immediately followed by one answer token, at the
/// end of the sequence. combined = 0.9 * accuracy + 0.1 * format.
RewardBreakdown reward(const Response& response, const TaskInstance& instance);
RewardBreakdown reward_tokens(const std::vector<int>& tokens, const TaskInstance& instance);

/// 1 if the planted crucial frame is among the selected target frames.
double perception_hit_rate(const TargetFrames& targets, const TaskInstance& instance);

/// Scripted perception oracle: locates the cue frame and decodes its
/// signature. Used by tests to show the environment is solvable.
int oracle_answer(const TaskInstance& instance);

}  // namespace appo
