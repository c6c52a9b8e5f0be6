// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "appo/trainer.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace appo;

namespace {

RunConfig small_config(Algorithm algo, std::uint64_t seed) {
  RunConfig cfg;
  cfg.algorithm = algo;
  cfg.group_size = 4;
  cfg.batch_size = 4;
  cfg.steps = 8;
  cfg.seed = seed;
  cfg.model.vocab_size = 16;
  cfg.model.embed_dim = 16;
  cfg.model.num_heads = 2;
  cfg.model.num_layers = 2;
  cfg.model.max_response_len = 6;
  cfg.gen.num_frames = 4;
  cfg.gen.tokens_per_frame = 2;
  cfg.gen.answer_alphabet = 4;
  cfg.k2 = 2;
  cfg.k3 = 4;
  return cfg;
}

std::vector<std::string> metric_lines(const TrainResult& r) {
  std::vector<std::string> lines;
  for (const StepMetrics& m : r.metrics) lines.push_back(metrics_to_json(m).dump());
  return lines;
}

}  // namespace

TEST_CASE("appo with alpha 0 reproduces dapo metrics byte for byte") {
  RunConfig appo_cfg = small_config(Algorithm::Appo, 31);
  appo_cfg.alpha = 0.0;
  RunConfig dapo_cfg = small_config(Algorithm::Dapo, 31);
  TrainResult a = train(appo_cfg);
  TrainResult d = train(dapo_cfg);
  REQUIRE(a.metrics.size() == d.metrics.size());
  CHECK(metric_lines(a) == metric_lines(d));
}

TEST_CASE("training is deterministic in the seed") {
  RunConfig cfg = small_config(Algorithm::Appo, 5);
  cfg.steps = 5;
  TrainResult a = train(cfg);
  TrainResult b = train(cfg);
  CHECK(metric_lines(a) == metric_lines(b));

  RunConfig other = cfg;
  other.seed = 6;
  TrainResult c = train(other);
  CHECK(metric_lines(a) != metric_lines(c));
}

TEST_CASE("zero steps: header-only metrics file and initial checkpoint") {
  RunConfig cfg = small_config(Algorithm::Appo, 9);
  cfg.steps = 0;
  cfg.out = "t0_metrics.jsonl";
  cfg.checkpoint_out = "t0_ckpt.json";
  TrainResult r = train_to_files(cfg, true);
  CHECK(r.metrics.empty());

  std::ifstream in(cfg.out);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == metrics_header_line());
  CHECK(!std::getline(in, line));

  PolicyParams initial = init_params(cfg.model, mix_seed(cfg.seed, 0x1a17ULL));
  PolicyParams saved = load_checkpoint(cfg.checkpoint_out);
  bool equal = true;
  initial.for_each_tensor([&](const std::string& name, const Mat& m) {
    saved.for_each_tensor([&](const std::string& n2, const Mat& m2) {
      if (n2 == name && m.data != m2.data) equal = false;
    });
  });
  CHECK(equal);
  std::remove(cfg.out.c_str());
  std::remove(cfg.checkpoint_out.c_str());
}

TEST_CASE("grpo with beta 0 and uniform lengths matches dapo losses") {
  RunConfig grpo_cfg = small_config(Algorithm::Grpo, 13);
  grpo_cfg.kl_coeff = 0.0;
  grpo_cfg.model.max_response_len = 2;  // completion needs two tokens: lengths are uniform
  grpo_cfg.steps = 4;
  RunConfig dapo_cfg = grpo_cfg;
  dapo_cfg.algorithm = Algorithm::Dapo;
  TrainResult g = train(grpo_cfg);
  TrainResult d = train(dapo_cfg);
  REQUIRE(g.metrics.size() == d.metrics.size());
  for (size_t s = 0; s < g.metrics.size(); ++s) {
    CHECK(g.metrics[s].loss == doctest::Approx(d.metrics[s].loss).epsilon(1e-9));
    CHECK(g.metrics[s].mean_reward == d.metrics[s].mean_reward);
  }
}

TEST_CASE("metrics satisfy their range invariants") {
  RunConfig cfg = small_config(Algorithm::Appo, 21);
  TrainResult r = train(cfg);
  for (const StepMetrics& m : r.metrics) {
    CHECK(m.mean_weight >= 1.0);
    CHECK(m.mean_weight <= 1.0 + cfg.alpha);
    for (double rate : {m.mean_accuracy, m.clip_fraction, m.perception_hit_rate,
                        m.frac_tokens_reweighted, m.mean_target_frac}) {
      CHECK(rate >= 0.0);
      CHECK(rate <= 1.0);
    }
    CHECK(std::isfinite(m.mean_entropy));
    CHECK(std::isfinite(m.grad_norm));
    CHECK(std::isfinite(m.loss));
  }
}

TEST_CASE("mean weight is exactly 1 for grpo, dapo, and appo with alpha 0") {
  for (Algorithm algo : {Algorithm::Grpo, Algorithm::Dapo}) {
    RunConfig cfg = small_config(algo, 17);
    cfg.steps = 3;
    TrainResult r = train(cfg);
    for (const StepMetrics& m : r.metrics) {
      CHECK(m.mean_weight == 1.0);
      CHECK(m.frac_tokens_reweighted == 0.0);
    }
  }
  RunConfig cfg = small_config(Algorithm::Appo, 17);
  cfg.alpha = 0.0;
  cfg.steps = 3;
  TrainResult r = train(cfg);
  for (const StepMetrics& m : r.metrics) CHECK(m.mean_weight == 1.0);
}

TEST_CASE("a fresh near-uniform policy selects frames at the random baseline") {
  RunConfig cfg = small_config(Algorithm::Appo, 77);
  cfg.gen.num_frames = 8;
  cfg.gen.tokens_per_frame = 4;
  cfg.model.embed_dim = 32;
  cfg.model.vocab_size = 32;
  cfg.k2 = 3;
  cfg.steps = 50;
  cfg.batch_size = 4;
  cfg.lr = 1e-12;  // keeps the policy effectively frozen at initialization
  TrainResult r = train(cfg);
  double diff_sum = 0.0, diff_sq = 0.0;
  for (const StepMetrics& m : r.metrics) {
    const double d = m.perception_hit_rate - m.mean_target_frac;
    diff_sum += d;
    diff_sq += d * d;
  }
  const int n = static_cast<int>(r.metrics.size());
  const double mean = diff_sum / n;
  const double var = diff_sq / n - mean * mean;
  const double se = std::sqrt(std::max(var, 1e-12) / n);
  CHECK(std::abs(mean) <= 3.0 * se + 1e-6);
}

TEST_CASE("config errors are raised before any work") {
  RunConfig cfg = small_config(Algorithm::Appo, 1);
  cfg.group_size = 1;
  CHECK_THROWS_AS(train(cfg), ConfigError);
  cfg = small_config(Algorithm::Appo, 1);
  cfg.inner_epochs = 5;
  CHECK_THROWS_AS(train(cfg), ConfigError);
  cfg = small_config(Algorithm::Appo, 1);
  cfg.clip_high = 1.5;
  CHECK_THROWS_AS(train(cfg), ConfigError);
}

TEST_CASE("exploding updates abort with the step index") {
  RunConfig cfg = small_config(Algorithm::Appo, 3);
  cfg.batch_size = 8;
  cfg.lr = 1e200;
  cfg.steps = 6;
  CHECK_THROWS_WITH_AS(train(cfg), doctest::Contains("at step"), NumericError);
}

TEST_CASE("inner epochs beyond the first exercise non-unit ratios") {
  RunConfig cfg = small_config(Algorithm::Appo, 8);
  cfg.batch_size = 8;
  cfg.inner_epochs = 3;
  cfg.lr = 1.0;
  cfg.steps = 6;
  TrainResult r = train(cfg);
  bool any_clip = false;
  for (const StepMetrics& m : r.metrics) any_clip = any_clip || m.clip_fraction > 0.0;
  CHECK(any_clip);
}

TEST_CASE("analyzer reports unit weights for identical distributions") {
  // two responses sharing one distribution everywhere: zero divergence
  Prng rng(5);
  RolloutGroup g = testutil::random_group(rng, 2, 3, 8, 4, 2);
  TokenDistribution shared = testutil::random_distribution(rng, 8);
  for (Response& r : g.responses)
    for (TokenDistribution& d : r.distributions) d = shared;
  for (Response& r : g.responses)
    for (size_t t = 0; t < r.tokens.size(); ++t)
      r.old_logprobs[t] = std::log(shared.probs[r.tokens[t]]);
  g.rewards[0] = RewardBreakdown::make(1, 1);
  g.rewards[1] = RewardBreakdown::make(0, 0);
  write_trace_file({g}, "analyze_in.jsonl");

  AnalyzeConfig cfg;
  nlohmann::ordered_json rep = analyze_trace("analyze_in.jsonl", cfg);
  REQUIRE(rep["groups"].size() == 1);
  CHECK(rep["groups"][0]["weights"]["min"].get<double>() == 1.0);
  CHECK(rep["groups"][0]["weights"]["max"].get<double>() == 1.0);

  // determinism: identical bytes on re-analysis
  CHECK(rep.dump() == analyze_trace("analyze_in.jsonl", cfg).dump());
  std::remove("analyze_in.jsonl");
}

TEST_CASE("analyzer: empty low set makes hard and soft coincide") {
  Prng rng(6);
  RolloutGroup g = testutil::random_group(rng, 3, 4, 8, 4, 2);
  for (RewardBreakdown& r : g.rewards) r = RewardBreakdown::make(1, 1);
  write_trace_file({g}, "analyze_s2.jsonl");
  AnalyzeConfig cfg;
  nlohmann::ordered_json rep = analyze_trace("analyze_s2.jsonl", cfg);
  const auto& targets = rep["groups"][0]["targets"];
  CHECK(targets["hard"] == targets["soft"]);
  CHECK(rep["groups"][0]["psi_s2"].empty());
  std::remove("analyze_s2.jsonl");
}

TEST_CASE("gen_data writes deterministic datasets") {
  GeneratorConfig gen;
  gen.seed = 4;
  gen_data(gen, 3, "data_a.jsonl");
  gen_data(gen, 3, "data_b.jsonl");
  std::ifstream a("data_a.jsonl"), b("data_b.jsonl");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
  int lines = 0;
  std::string line;
  std::ifstream c("data_a.jsonl");
  while (std::getline(c, line)) ++lines;
  CHECK(lines == 3);
  std::remove("data_a.jsonl");
  std::remove("data_b.jsonl");

  CHECK_THROWS_AS(gen_data(gen, 0, "x.jsonl"), ConfigError);
  CHECK_THROWS_AS(gen_data(gen, 1, "/nonexistent-dir/x.jsonl"), IoError);
}

TEST_CASE("trace dump from training validates and analyzes") {
  RunConfig cfg = small_config(Algorithm::Appo, 2);
  cfg.steps = 2;
  cfg.out = "tt_metrics.jsonl";
  cfg.trace_out = "tt_trace.jsonl";
  train_to_files(cfg, true);

  std::vector<RolloutGroup> groups = read_trace_file(cfg.trace_out);
  CHECK(groups.size() == static_cast<size_t>(cfg.steps * cfg.batch_size));
  for (const RolloutGroup& g : groups) {
    ValidationReport rep = validate_group(g);
    if (!rep.ok())
      for (const std::string& v : rep.violations) MESSAGE(v);
    CHECK(rep.ok());
  }
  std::remove(cfg.out.c_str());
  std::remove((cfg.out + ".checkpoint.json").c_str());
  std::remove(cfg.trace_out.c_str());
}
