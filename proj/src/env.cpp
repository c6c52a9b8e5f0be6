// SPDX-License-Identifier: Apache-2.0
#include "appo/env.hpp"

#include <algorithm>
#include <cmath>

namespace appo {

void GeneratorConfig::validate() const {
  if (num_frames < 2) throw ConfigError("num_frames must be >= 2");
  if (tokens_per_frame < 1) throw ConfigError("tokens_per_frame must be >= 1");
  if (answer_alphabet < 2) throw ConfigError("answer_alphabet must be >= 2");
  if (snr <= 0.0) throw ConfigError("snr must be > 0");
  // ids: tag 0, answers 1..A, question template A+1..A+3
  if (vocab_size < answer_alphabet + 4)
    throw ConfigError("vocab_size too small for the answer protocol");
  // directions: cue axis 0, signature axes 1..A
  if (embed_dim < answer_alphabet + 1)
    throw ConfigError("embed_dim too small for the signature directions");
}

bool is_answer_token(int token, int alphabet) { return token >= 1 && token <= alphabet; }

bool is_complete_answer(const std::vector<int>& response_tokens, int alphabet) {
  const int n = static_cast<int>(response_tokens.size());
  return n >= 2 && response_tokens[n - 2] == kAnswerTag &&
         is_answer_token(response_tokens[n - 1], alphabet);
}

TaskInstance generate(const GeneratorConfig& cfg, std::uint64_t index) {
  cfg.validate();
  Prng rng(mix_seed(cfg.seed, index, 0x656e76));

  TaskInstance inst;
  inst.layout.num_frames = cfg.num_frames;
  inst.layout.tokens_per_frame.assign(cfg.num_frames, cfg.tokens_per_frame);

  inst.crucial_frame = rng.uniform_int(cfg.num_frames);
  const int answer_idx = rng.uniform_int(cfg.answer_alphabet);
  inst.answer_token = 1 + answer_idx;

  int distractor = rng.uniform_int(cfg.num_frames - 1);
  if (distractor >= inst.crucial_frame) ++distractor;
  inst.distractor_frames = {distractor};
  int wrong_idx = rng.uniform_int(cfg.answer_alphabet - 1);
  if (wrong_idx >= answer_idx) ++wrong_idx;

  const int v_total = cfg.num_frames * cfg.tokens_per_frame;
  inst.visual_tokens = Mat(v_total, cfg.embed_dim);
  for (int t = 0; t < cfg.num_frames; ++t) {
    for (int k = 0; k < cfg.tokens_per_frame; ++k) {
      double* row = inst.visual_tokens.row(t * cfg.tokens_per_frame + k);
      for (int j = 0; j < cfg.embed_dim; ++j) row[j] = rng.normal();
      if (t == inst.crucial_frame) {
        row[0] += cfg.snr;                  // cue direction
        row[1 + answer_idx] += cfg.snr;     // answer signature
      } else if (t == distractor) {
        row[1 + wrong_idx] += cfg.snr;      // conflicting signature, no cue
      }
    }
  }

  const int a = cfg.answer_alphabet;
  inst.question_tokens = {a + 1, a + 2, a + 3};
  return inst;
}

RewardBreakdown reward_tokens(const std::vector<int>& tokens, const TaskInstance& instance) {
  const int n = static_cast<int>(tokens.size());

  int tag_count = 0;
  int last_tag = -1;
  for (int i = 0; i < n; ++i) {
    if (tokens[i] == kAnswerTag) {
      ++tag_count;
      last_tag = i;
    }
  }

  // The alphabet size is recoverable from the question template (ids A+1..A+3).
  const int a = instance.question_tokens.empty() ? 1 : instance.question_tokens[0] - 1;

  int accuracy = 0;
  if (last_tag >= 0 && last_tag + 1 < n && tokens[last_tag + 1] == instance.answer_token)
    accuracy = 1;

  int format = 0;
  if (tag_count == 1 && n >= 2 && tokens[n - 2] == kAnswerTag &&
      is_answer_token(tokens[n - 1], a))
    format = 1;

  return RewardBreakdown::make(accuracy, format);
}

RewardBreakdown reward(const Response& response, const TaskInstance& instance) {
  return reward_tokens(response.tokens, instance);
}

double perception_hit_rate(const TargetFrames& targets, const TaskInstance& instance) {
  return std::binary_search(targets.frames.begin(), targets.frames.end(),
                            instance.crucial_frame)
             ? 1.0
             : 0.0;
}

int oracle_answer(const TaskInstance& instance) {
  const VisualLayout& layout = instance.layout;
  const int d = instance.visual_tokens.cols;

  // Frame whose mean token projects most onto the cue axis.
  int best_frame = 0;
  double best_cue = -1e300;
  int offset = 0;
  std::vector<int> starts(layout.num_frames);
  for (int t = 0; t < layout.num_frames; ++t) {
    starts[t] = offset;
    double cue = 0.0;
    for (int k = 0; k < layout.tokens_per_frame[t]; ++k)
      cue += instance.visual_tokens(offset + k, 0);
    cue /= layout.tokens_per_frame[t];
    if (cue > best_cue) {
      best_cue = cue;
      best_frame = t;
    }
    offset += layout.tokens_per_frame[t];
  }

  // Signature axis with the largest mean projection within that frame.
  const int alphabet = instance.question_tokens.empty() ? 1 : instance.question_tokens[0] - 1;
  int best_answer = 0;
  double best_sig = -1e300;
  for (int k = 0; k < alphabet && 1 + k < d; ++k) {
    double sig = 0.0;
    for (int j = 0; j < layout.tokens_per_frame[best_frame]; ++j)
      sig += instance.visual_tokens(starts[best_frame] + j, 1 + k);
    if (sig > best_sig) {
      best_sig = sig;
      best_answer = k;
    }
  }
  return 1 + best_answer;
}

}  // namespace appo
