// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>

#include "appo/objective.hpp"
#include "appo/reference.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace appo;

namespace {

ObjectiveConfig default_cfg(Algorithm a) {
  ObjectiveConfig cfg;
  cfg.algorithm = a;
  return cfg;
}

std::vector<std::vector<double>> zero_like(const std::vector<std::vector<double>>& shape) {
  std::vector<std::vector<double>> out(shape.size());
  for (size_t i = 0; i < shape.size(); ++i) out[i].assign(shape[i].size(), 0.0);
  return out;
}

TokenWeightMap ones(const std::vector<std::vector<double>>& shape) {
  std::vector<int> lengths;
  for (const auto& g : shape) lengths.push_back(static_cast<int>(g.size()));
  return unit_weights(lengths);
}

double sum_normalized_grpo(const LossReport& rep) {
  double acc = 0.0;
  const int g = static_cast<int>(rep.per_token_terms.size());
  for (int i = 0; i < g; ++i) {
    double inner = 0.0;
    for (double v : rep.per_token_terms[i]) inner += v;
    acc += inner / rep.per_token_terms[i].size();
  }
  return acc / g;
}

double sum_normalized_token(const LossReport& rep) {
  double acc = 0.0;
  long total = 0;
  for (const auto& g : rep.per_token_terms) {
    for (double v : g) acc += v;
    total += static_cast<long>(g.size());
  }
  return acc / total;
}

}  // namespace

TEST_CASE("advantages of a symmetric two-point group") {
  AdvantageVector a = advantages({1.0, 0.0});
  CHECK(a.mean_reward == doctest::Approx(0.5));
  CHECK(a.std_reward == doctest::Approx(0.5));
  CHECK(a.values[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a.values[1] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("uniform rewards give zero advantages") {
  AdvantageVector a = advantages({0.7, 0.7, 0.7, 0.7});
  for (double v : a.values) CHECK(v == 0.0);
}

TEST_CASE("advantages of a 2-of-8 success pattern") {
  // mu = 0.25, sigma = sqrt(0.1875)
  AdvantageVector a = advantages({1, 1, 0, 0, 0, 0, 0, 0});
  for (int i = 0; i < 2; ++i) CHECK(a.values[i] == doctest::Approx(1.7320508075688772).epsilon(1e-9));
  for (int i = 2; i < 8; ++i) CHECK(a.values[i] == doctest::Approx(-0.5773502691896258).epsilon(1e-9));
}

TEST_CASE("advantages are standardized") {
  Prng rng(3);
  for (int it = 0; it < 200; ++it) {
    const int g = 2 + rng.uniform_int(10);
    std::vector<double> rewards(g);
    for (double& r : rewards) r = rng.uniform();
    AdvantageVector a = advantages(rewards);
    if (a.std_reward < 1e-6) continue;
    double mean = 0.0, var = 0.0;
    for (double v : a.values) mean += v;
    mean /= g;
    for (double v : a.values) var += (v - mean) * (v - mean);
    var /= g;
    CHECK(std::abs(mean) <= 1e-9);
    CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("ratios identity and closed form") {
  std::vector<double> same = {-1.0, -2.5};
  std::vector<double> r = ratios(same, same);
  CHECK(r == std::vector<double>{1.0, 1.0});

  std::vector<double> shifted = {-1.0 + std::log(2.0), -2.5};
  r = ratios(shifted, same);
  CHECK(r[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ratios match the elementwise exp oracle; non-finite rejected") {
  Prng rng(5);
  for (int it = 0; it < 100; ++it) {
    std::vector<double> n(6), o(6);
    for (int i = 0; i < 6; ++i) {
      n[i] = -5.0 * rng.uniform();
      o[i] = -5.0 * rng.uniform();
    }
    std::vector<double> r = ratios(n, o);
    for (int i = 0; i < 6; ++i) CHECK(r[i] == doctest::Approx(std::exp(n[i] - o[i])).epsilon(1e-12));
  }
  std::vector<double> bad = {std::nan("")};
  CHECK_THROWS_AS(ratios(bad, {0.0}), NumericError);
}

TEST_CASE("grpo identity case") {
  std::vector<std::vector<double>> r = {{1.0, 1.0}};
  AdvantageVector a;
  a.values = {1.0};
  ObjectiveConfig cfg = default_cfg(Algorithm::Grpo);
  cfg.kl_coeff = 0.0;
  LossReport rep = grpo_loss(r, a, zero_like(r), cfg);
  CHECK(rep.loss == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(rep.clip_fraction == 0.0);
  CHECK(rep.mean_ratio == doctest::Approx(1.0));
}

TEST_CASE("grpo with zero advantages and no KL is zero loss") {
  Prng rng(7);
  std::vector<std::vector<double>> r = {{1.1, 0.9, 1.0}, {0.8}};
  AdvantageVector a;
  a.values = {0.0, 0.0};
  ObjectiveConfig cfg = default_cfg(Algorithm::Grpo);
  cfg.kl_coeff = 0.0;
  LossReport rep = grpo_loss(r, a, zero_like(r), cfg);
  CHECK(rep.loss == 0.0);
}

TEST_CASE("clip-higher bound engages at ratio 1.5") {
  std::vector<std::vector<double>> r = {{1.5}};
  AdvantageVector a;
  a.values = {1.0};
  ObjectiveConfig cfg = default_cfg(Algorithm::Dapo);
  LossReport rep = dapo_loss(r, a, cfg);
  CHECK(rep.per_token_terms[0][0] == doctest::Approx(1.28).epsilon(1e-12));
  CHECK(rep.clip_fraction == 1.0);
}

TEST_CASE("lower clip bound engages for negative advantage") {
  std::vector<std::vector<double>> r = {{0.7}};
  AdvantageVector a;
  a.values = {-1.0};
  LossReport rep = dapo_loss(r, a, default_cfg(Algorithm::Dapo));
  CHECK(rep.per_token_terms[0][0] == doctest::Approx(-0.8).epsilon(1e-12));
  CHECK(rep.clip_fraction == 1.0);
}

TEST_CASE("dapo token normalization") {
  std::vector<std::vector<double>> r = {{1.0}, {1.0, 1.0, 1.0}};
  AdvantageVector a;
  a.values = {1.0, -1.0};
  LossReport rep = dapo_loss(r, a, default_cfg(Algorithm::Dapo));
  CHECK(-rep.loss == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("dapo equals grpo with beta 0 and uniform lengths") {
  Prng rng(11);
  for (int it = 0; it < 100; ++it) {
    const int g = 2 + rng.uniform_int(4);
    const int len = 1 + rng.uniform_int(6);
    std::vector<std::vector<double>> r(g, std::vector<double>(len));
    for (auto& gi : r)
      for (double& x : gi) x = std::exp(0.3 * rng.normal());
    AdvantageVector a;
    a.values.resize(g);
    for (double& v : a.values) v = rng.normal();
    ObjectiveConfig cfg = default_cfg(Algorithm::Grpo);
    cfg.kl_coeff = 0.0;
    LossReport lg = grpo_loss(r, a, zero_like(r), cfg);
    LossReport ld = dapo_loss(r, a, default_cfg(Algorithm::Dapo));
    CHECK(lg.loss == doctest::Approx(ld.loss).epsilon(1e-12));
  }
}

TEST_CASE("appo with unit weights reproduces dapo bit-for-bit") {
  Prng rng(13);
  for (int it = 0; it < 100; ++it) {
    const int g = 2 + rng.uniform_int(4);
    std::vector<std::vector<double>> r(g);
    for (auto& gi : r) {
      gi.resize(1 + rng.uniform_int(6));
      for (double& x : gi) x = std::exp(0.4 * rng.normal());
    }
    AdvantageVector a;
    a.values.resize(g);
    for (double& v : a.values) v = rng.normal();
    ObjectiveConfig cfg = default_cfg(Algorithm::Appo);
    LossReport lw = appo_loss(r, a, ones(r), cfg);
    LossReport ld = dapo_loss(r, a, cfg);
    CHECK(std::memcmp(&lw.loss, &ld.loss, sizeof(double)) == 0);
    for (int i = 0; i < g; ++i)
      for (size_t t = 0; t < r[i].size(); ++t) {
        CHECK(std::memcmp(&lw.per_token_terms[i][t], &ld.per_token_terms[i][t],
                          sizeof(double)) == 0);
        CHECK(std::memcmp(&lw.logprob_grads[i][t], &ld.logprob_grads[i][t],
                          sizeof(double)) == 0);
      }
  }
}

TEST_CASE("appo weighted mean example") {
  std::vector<std::vector<double>> r = {{1.0, 1.0}};
  AdvantageVector a;
  a.values = {1.0};
  TokenWeightMap w = unit_weights({2});
  w.weights[0][1] = 2.0;
  LossReport rep = appo_loss(r, a, w, default_cfg(Algorithm::Appo));
  CHECK(-rep.loss == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("appo matches the double-loop oracle within 1e-12") {
  Prng rng(17);
  for (int it = 0; it < 300; ++it) {
    const int g = 2 + rng.uniform_int(6);
    std::vector<std::vector<double>> r(g);
    std::vector<std::vector<double>> w(g);
    for (int i = 0; i < g; ++i) {
      const int len = 1 + rng.uniform_int(8);
      r[i].resize(len);
      w[i].resize(len);
      for (int t = 0; t < len; ++t) {
        r[i][t] = std::exp(0.5 * rng.normal());
        w[i][t] = 1.0 + rng.uniform();
      }
    }
    AdvantageVector a;
    a.values.resize(g);
    for (double& v : a.values) v = rng.normal();
    TokenWeightMap wm = ones(r);
    wm.weights = w;
    LossReport rep = appo_loss(r, a, wm, default_cfg(Algorithm::Appo));
    const double want = ref::appo_objective(r, a.values, w, 0.2, 0.28);
    CHECK(-rep.loss == doctest::Approx(want).epsilon(1e-13));
    CHECK(std::abs(-rep.loss - want) <= 1e-12);
  }
}

TEST_CASE("per-token terms reduce to the loss under each normalization") {
  Prng rng(19);
  for (int it = 0; it < 50; ++it) {
    const int g = 2 + rng.uniform_int(4);
    std::vector<std::vector<double>> r(g);
    std::vector<std::vector<double>> kl(g);
    for (int i = 0; i < g; ++i) {
      const int len = 1 + rng.uniform_int(5);
      r[i].resize(len);
      kl[i].resize(len);
      for (int t = 0; t < len; ++t) {
        r[i][t] = std::exp(0.4 * rng.normal());
        kl[i][t] = 0.2 * rng.normal();
      }
    }
    AdvantageVector a;
    a.values.resize(g);
    for (double& v : a.values) v = rng.normal();

    LossReport lg = grpo_loss(r, a, kl, default_cfg(Algorithm::Grpo));
    CHECK(sum_normalized_grpo(lg) == doctest::Approx(-lg.loss).epsilon(1e-9));

    LossReport ld = dapo_loss(r, a, default_cfg(Algorithm::Dapo));
    CHECK(sum_normalized_token(ld) == doctest::Approx(-ld.loss).epsilon(1e-9));
  }
}

TEST_CASE("losses are invariant under joint permutation of responses") {
  Prng rng(23);
  std::vector<std::vector<double>> r = {{1.2}, {0.9, 1.1}, {1.0, 0.8, 1.3}};
  AdvantageVector a;
  a.values = {0.5, -1.0, 1.5};
  std::vector<std::vector<double>> kl = zero_like(r);
  const double base_g = grpo_loss(r, a, kl, default_cfg(Algorithm::Grpo)).loss;
  const double base_d = dapo_loss(r, a, default_cfg(Algorithm::Dapo)).loss;

  std::vector<int> perm = {2, 0, 1};
  std::vector<std::vector<double>> rp, klp;
  AdvantageVector ap;
  for (int i : perm) {
    rp.push_back(r[i]);
    klp.push_back(kl[i]);
    ap.values.push_back(a.values[i]);
  }
  CHECK(grpo_loss(rp, ap, klp, default_cfg(Algorithm::Grpo)).loss ==
        doctest::Approx(base_g).epsilon(1e-12));
  CHECK(dapo_loss(rp, ap, default_cfg(Algorithm::Dapo)).loss ==
        doctest::Approx(base_d).epsilon(1e-12));
}

TEST_CASE("scaling weights scales unclipped appo terms linearly") {
  Prng rng(29);
  std::vector<std::vector<double>> r = {{1.0, 1.0}, {1.0}};  // ratios 1: never clipped
  AdvantageVector a;
  a.values = {0.7, -0.4};
  TokenWeightMap w = ones(r);
  for (auto& g : w.weights)
    for (double& x : g) x = 1.0 + rng.uniform();
  TokenWeightMap w2 = w;
  for (auto& g : w2.weights)
    for (double& x : g) x *= 3.0;
  LossReport l1 = appo_loss(r, a, w, default_cfg(Algorithm::Appo));
  LossReport l2 = appo_loss(r, a, w2, default_cfg(Algorithm::Appo));
  for (size_t i = 0; i < l1.per_token_terms.size(); ++i)
    for (size_t t = 0; t < l1.per_token_terms[i].size(); ++t)
      CHECK(l2.per_token_terms[i][t] ==
            doctest::Approx(3.0 * l1.per_token_terms[i][t]).epsilon(1e-12));
}

TEST_CASE("unit ratios never activate the clip branch") {
  Prng rng(31);
  for (int it = 0; it < 50; ++it) {
    const int g = 2 + rng.uniform_int(5);
    std::vector<std::vector<double>> r(g);
    for (auto& gi : r) gi.assign(1 + rng.uniform_int(6), 1.0);
    AdvantageVector a;
    a.values.resize(g);
    for (double& v : a.values) v = rng.normal();
    CHECK(dapo_loss(r, a, default_cfg(Algorithm::Dapo)).clip_fraction == 0.0);
  }
}

TEST_CASE("objective config validation") {
  ObjectiveConfig cfg;
  cfg.clip_low = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ObjectiveConfig{};
  cfg.clip_high = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ObjectiveConfig{};
  cfg.clip_low = 0.3;
  cfg.clip_high = 0.2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
