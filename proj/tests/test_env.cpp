// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>

#include "appo/env.hpp"
#include "doctest.h"

using namespace appo;

namespace {

GeneratorConfig default_gen() {
  GeneratorConfig g;
  g.seed = 123;
  return g;
}

Response response_from_tokens(std::vector<int> tokens) {
  Response r;
  r.tokens = std::move(tokens);
  return r;
}

}  // namespace

TEST_CASE("generation is deterministic in (seed, index)") {
  GeneratorConfig cfg = default_gen();
  TaskInstance a = generate(cfg, 17);
  TaskInstance b = generate(cfg, 17);
  CHECK(a.crucial_frame == b.crucial_frame);
  CHECK(a.answer_token == b.answer_token);
  CHECK(a.question_tokens == b.question_tokens);
  REQUIRE(a.visual_tokens.data.size() == b.visual_tokens.data.size());
  CHECK(std::memcmp(a.visual_tokens.data.data(), b.visual_tokens.data.data(),
                    a.visual_tokens.data.size() * sizeof(double)) == 0);

  TaskInstance c = generate(cfg, 18);
  CHECK(std::memcmp(a.visual_tokens.data.data(), c.visual_tokens.data.data(),
                    a.visual_tokens.data.size() * sizeof(double)) != 0);
}

TEST_CASE("instance structure: one crucial frame, at least one distractor") {
  GeneratorConfig cfg = default_gen();
  for (int i = 0; i < 50; ++i) {
    TaskInstance inst = generate(cfg, i);
    CHECK(inst.crucial_frame >= 0);
    CHECK(inst.crucial_frame < cfg.num_frames);
    CHECK(is_answer_token(inst.answer_token, cfg.answer_alphabet));
    REQUIRE(!inst.distractor_frames.empty());
    for (int d : inst.distractor_frames) CHECK(d != inst.crucial_frame);
    CHECK(inst.layout.total_tokens() == cfg.num_frames * cfg.tokens_per_frame);
  }
}

TEST_CASE("answers and crucial frames are uniform within 5% over 10^4 instances") {
  GeneratorConfig cfg = default_gen();
  const int n = 10000;
  std::vector<int> answer_hist(cfg.answer_alphabet, 0);
  std::vector<int> frame_hist(cfg.num_frames, 0);
  for (int i = 0; i < n; ++i) {
    TaskInstance inst = generate(cfg, i);
    answer_hist[inst.answer_token - 1]++;
    frame_hist[inst.crucial_frame]++;
  }
  for (int k = 0; k < cfg.answer_alphabet; ++k)
    CHECK(std::abs(answer_hist[k] / double(n) - 1.0 / cfg.answer_alphabet) < 0.05);
  for (int t = 0; t < cfg.num_frames; ++t)
    CHECK(std::abs(frame_hist[t] / double(n) - 1.0 / cfg.num_frames) < 0.05);
}

TEST_CASE("reward weighting per the answer protocol") {
  GeneratorConfig cfg = default_gen();
  TaskInstance inst = generate(cfg, 0);
  const int a = inst.answer_token;
  const int other = a == 1 ? 2 : 1;

  // correct answer, valid format
  CHECK(reward(response_from_tokens({7, kAnswerTag, a}), inst).combined == 1.0);
  // correct answer, malformed tail (trailing token after the answer)
  CHECK(reward(response_from_tokens({kAnswerTag, a, 7}), inst).combined == 0.9);
  // wrong answer, valid format
  CHECK(reward(response_from_tokens({9, kAnswerTag, other}), inst).combined == 0.1);
  // no tag at all
  CHECK(reward(response_from_tokens({5, 6, 7}), inst).combined == 0.0);
  // two tags: format 0; accuracy follows the final tag
  CHECK(reward(response_from_tokens({kAnswerTag, a, kAnswerTag, a}), inst).combined == 0.9);
  // tag as the last token cannot be followed by an answer
  CHECK(reward(response_from_tokens({a, kAnswerTag}), inst).combined == 0.0);
}

TEST_CASE("reward ignores content before the answer tag") {
  GeneratorConfig cfg = default_gen();
  TaskInstance inst = generate(cfg, 3);
  const int a = inst.answer_token;
  RewardBreakdown base = reward(response_from_tokens({kAnswerTag, a}), inst);
  RewardBreakdown padded = reward(response_from_tokens({9, 8, 7, 6, kAnswerTag, a}), inst);
  CHECK(base.accuracy == padded.accuracy);
  CHECK(base.format == padded.format);
  CHECK(base.combined == padded.combined);
}

TEST_CASE("completion predicate mirrors the format rule's tail") {
  CHECK(is_complete_answer({kAnswerTag, 1}, 4));
  CHECK(is_complete_answer({9, 9, kAnswerTag, 4}, 4));
  CHECK(!is_complete_answer({kAnswerTag}, 4));
  CHECK(!is_complete_answer({kAnswerTag, 5}, 4));  // not in the alphabet
  CHECK(!is_complete_answer({1, kAnswerTag}, 4));
}

TEST_CASE("perception hit rate membership") {
  GeneratorConfig cfg = default_gen();
  TaskInstance inst = generate(cfg, 2);
  TargetFrames hit;
  hit.frames = {inst.crucial_frame};
  CHECK(perception_hit_rate(hit, inst) == 1.0);
  TargetFrames empty;
  CHECK(perception_hit_rate(empty, inst) == 0.0);
}

TEST_CASE("random target sets hit at roughly k/T") {
  GeneratorConfig cfg = default_gen();
  Prng rng(9);
  const int n = 4000;
  const int k = 3;
  double hits = 0.0;
  for (int i = 0; i < n; ++i) {
    TaskInstance inst = generate(cfg, i);
    TargetFrames t;
    std::vector<int> all(cfg.num_frames);
    for (int f = 0; f < cfg.num_frames; ++f) all[f] = f;
    for (int f = cfg.num_frames - 1; f > 0; --f) std::swap(all[f], all[rng.uniform_int(f + 1)]);
    t.frames.assign(all.begin(), all.begin() + k);
    std::sort(t.frames.begin(), t.frames.end());
    hits += perception_hit_rate(t, inst);
  }
  const double rate = hits / n;
  const double expect = double(k) / cfg.num_frames;
  const double sigma = std::sqrt(expect * (1 - expect) / n);
  CHECK(std::abs(rate - expect) < 4 * sigma + 1e-9);
}

TEST_CASE("scripted oracle solves every instance") {
  GeneratorConfig cfg = default_gen();
  for (int i = 0; i < 1000; ++i) {
    TaskInstance inst = generate(cfg, i);
    const int guess = oracle_answer(inst);
    Response r = response_from_tokens({kAnswerTag, guess});
    CHECK(reward(r, inst).accuracy == 1);
  }
}

TEST_CASE("a visually blind policy cannot beat chance") {
  GeneratorConfig cfg = default_gen();
  const int n = 10000;
  int correct = 0;
  for (int i = 0; i < n; ++i) {
    TaskInstance inst = generate(cfg, i);
    // fixed guess, never looks at visual tokens
    Response r = response_from_tokens({kAnswerTag, 1});
    correct += reward(r, inst).accuracy;
  }
  const double p = 1.0 / cfg.answer_alphabet;
  const double sigma = std::sqrt(p * (1 - p) / n);
  CHECK(correct / double(n) <= p + 3 * sigma);
}

TEST_CASE("generator config validation") {
  GeneratorConfig cfg = default_gen();
  cfg.num_frames = 1;
  CHECK_THROWS_AS(generate(cfg, 0), ConfigError);
  cfg = default_gen();
  cfg.vocab_size = 6;
  CHECK_THROWS_AS(generate(cfg, 0), ConfigError);
  cfg = default_gen();
  cfg.embed_dim = 4;
  CHECK_THROWS_AS(generate(cfg, 0), ConfigError);
}
