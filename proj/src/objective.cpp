// SPDX-License-Identifier: Apache-2.0
#include "appo/objective.hpp"

#include <algorithm>
#include <cmath>

namespace appo {

Algorithm algorithm_from_name(const std::string& name) {
  if (name == "grpo") return Algorithm::Grpo;
  if (name == "dapo") return Algorithm::Dapo;
  if (name == "appo") return Algorithm::Appo;
  throw ConfigError("unknown algorithm: " + name);
}

const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::Grpo: return "grpo";
    case Algorithm::Dapo: return "dapo";
    case Algorithm::Appo: return "appo";
  }
  return "?";
}

void ObjectiveConfig::validate() const {
  if (!(clip_low > 0.0 && clip_low <= clip_high && clip_high < 1.0))
    throw ConfigError("clip bounds must satisfy 0 < clip_low <= clip_high < 1");
  if (kl_coeff < 0.0) throw ConfigError("kl_coeff must be >= 0");
  if (sigma_eps <= 0.0) throw ConfigError("sigma_eps must be > 0");
}

AdvantageVector advantages(const std::vector<double>& rewards, double sigma_eps) {
  if (rewards.size() < 2) throw ConfigError("advantages need a group of >= 2 rewards");
  AdvantageVector adv;
  const int g = static_cast<int>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= g;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= g;  // population variance
  const double sd = std::sqrt(var);
  adv.mean_reward = mean;
  adv.std_reward = sd;
  adv.values.resize(g);
  if (sd < sigma_eps) {
    std::fill(adv.values.begin(), adv.values.end(), 0.0);
  } else {
    for (int i = 0; i < g; ++i) adv.values[i] = (rewards[i] - mean) / sd;
  }
  return adv;
}

std::vector<double> ratios(const std::vector<double>& new_logprobs,
                           const std::vector<double>& old_logprobs) {
  if (new_logprobs.size() != old_logprobs.size())
    throw ShapeError("logprob vectors of different lengths");
  std::vector<double> out(new_logprobs.size());
  for (size_t t = 0; t < out.size(); ++t) {
    if (!std::isfinite(new_logprobs[t]) || !std::isfinite(old_logprobs[t]))
      throw NumericError("non-finite logprob in ratio computation");
    out[t] = std::exp(new_logprobs[t] - old_logprobs[t]);
  }
  return out;
}

namespace {

struct TokenTerm {
  double value;      // objective contribution before normalization
  double d_logprob;  // derivative of that contribution wrt new_logprob
  bool clipped;      // the clipped branch was strictly smaller
};

/// min(r*c, clip(r)*c) where c folds advantage and weight. The clipped branch
/// is constant in the logprob, so its derivative is zero.
TokenTerm clipped_term(double ratio, double coeff, const ObjectiveConfig& cfg) {
  const double clipped_ratio =
      std::clamp(ratio, 1.0 - cfg.clip_low, 1.0 + cfg.clip_high);
  const double unclipped = ratio * coeff;
  const double clipped = clipped_ratio * coeff;
  TokenTerm term;
  if (clipped < unclipped) {
    term.value = clipped;
    term.d_logprob = 0.0;
    term.clipped = true;
  } else {
    term.value = unclipped;
    term.d_logprob = ratio * coeff;  // dr/dlogprob = r
    term.clipped = false;
  }
  return term;
}

void check_group_shapes(const std::vector<std::vector<double>>& ratio_groups,
                        const AdvantageVector& adv) {
  if (ratio_groups.size() != adv.values.size())
    throw ShapeError("ratio groups do not match advantage vector");
}

}  // namespace

LossReport grpo_loss(const std::vector<std::vector<double>>& ratio_groups,
                     const AdvantageVector& adv,
                     const std::vector<std::vector<double>>& kl_deltas,
                     const ObjectiveConfig& cfg) {
  cfg.validate();
  check_group_shapes(ratio_groups, adv);
  if (kl_deltas.size() != ratio_groups.size())
    throw ShapeError("kl deltas do not match ratio groups");

  const int g = static_cast<int>(ratio_groups.size());
  LossReport rep;
  rep.per_token_terms.resize(g);
  rep.logprob_grads.resize(g);

  double objective = 0.0;
  double ratio_sum = 0.0;
  long clipped = 0, total = 0;

  for (int i = 0; i < g; ++i) {
    const std::vector<double>& r = ratio_groups[i];
    if (kl_deltas[i].size() != r.size())
      throw ShapeError("kl deltas do not match response length");
    const int len = static_cast<int>(r.size());
    rep.per_token_terms[i].resize(len);
    rep.logprob_grads[i].resize(len);
    const double norm = 1.0 / (static_cast<double>(g) * len);
    double acc = 0.0;
    for (int t = 0; t < len; ++t) {
      TokenTerm term = clipped_term(r[t], adv.values[i], cfg);
      const double delta = kl_deltas[i][t];  // logpi_ref - logpi_theta
      const double kl = std::exp(delta) - delta - 1.0;
      const double value = term.value - cfg.kl_coeff * kl;
      // d(kl)/d(new_logprob) = 1 - exp(delta)
      const double d_value = term.d_logprob - cfg.kl_coeff * (1.0 - std::exp(delta));
      rep.per_token_terms[i][t] = value;
      rep.logprob_grads[i][t] = -norm * d_value;
      acc += value;
      ratio_sum += r[t];
      clipped += term.clipped ? 1 : 0;
      ++total;
    }
    objective += acc / len;
  }
  objective /= g;
  rep.loss = -objective;
  rep.clip_fraction = total > 0 ? static_cast<double>(clipped) / total : 0.0;
  rep.mean_ratio = total > 0 ? ratio_sum / total : 0.0;
  rep.clipped_count = clipped;
  rep.token_count = total;
  return rep;
}

LossReport dapo_loss(const std::vector<std::vector<double>>& ratio_groups,
                     const AdvantageVector& adv, const ObjectiveConfig& cfg) {
  cfg.validate();
  check_group_shapes(ratio_groups, adv);

  const int g = static_cast<int>(ratio_groups.size());
  long total = 0;
  for (const std::vector<double>& r : ratio_groups) total += static_cast<long>(r.size());

  LossReport rep;
  rep.per_token_terms.resize(g);
  rep.logprob_grads.resize(g);

  double objective = 0.0;
  double ratio_sum = 0.0;
  long clipped = 0;
  const double norm = total > 0 ? 1.0 / total : 0.0;

  for (int i = 0; i < g; ++i) {
    const std::vector<double>& r = ratio_groups[i];
    const int len = static_cast<int>(r.size());
    rep.per_token_terms[i].resize(len);
    rep.logprob_grads[i].resize(len);
    for (int t = 0; t < len; ++t) {
      TokenTerm term = clipped_term(r[t], adv.values[i], cfg);
      rep.per_token_terms[i][t] = term.value;
      rep.logprob_grads[i][t] = -norm * term.d_logprob;
      objective += term.value;
      ratio_sum += r[t];
      clipped += term.clipped ? 1 : 0;
    }
  }
  objective *= norm;
  rep.loss = -objective;
  rep.clip_fraction = total > 0 ? static_cast<double>(clipped) / total : 0.0;
  rep.mean_ratio = total > 0 ? ratio_sum / total : 0.0;
  rep.clipped_count = clipped;
  rep.token_count = total;
  return rep;
}

LossReport appo_loss(const std::vector<std::vector<double>>& ratio_groups,
                     const AdvantageVector& adv, const TokenWeightMap& weights,
                     const ObjectiveConfig& cfg) {
  cfg.validate();
  check_group_shapes(ratio_groups, adv);
  if (weights.weights.size() != ratio_groups.size())
    throw ShapeError("weight map does not match ratio groups");

  const int g = static_cast<int>(ratio_groups.size());
  long total = 0;
  for (const std::vector<double>& r : ratio_groups) total += static_cast<long>(r.size());

  LossReport rep;
  rep.per_token_terms.resize(g);
  rep.logprob_grads.resize(g);

  double objective = 0.0;
  double ratio_sum = 0.0;
  long clipped = 0;
  const double norm = total > 0 ? 1.0 / total : 0.0;

  for (int i = 0; i < g; ++i) {
    const std::vector<double>& r = ratio_groups[i];
    const int len = static_cast<int>(r.size());
    if (static_cast<int>(weights.weights[i].size()) != len)
      throw ShapeError("weight map does not match response length");
    rep.per_token_terms[i].resize(len);
    rep.logprob_grads[i].resize(len);
    for (int t = 0; t < len; ++t) {
      TokenTerm term = clipped_term(r[t], weights.weights[i][t] * adv.values[i], cfg);
      rep.per_token_terms[i][t] = term.value;
      rep.logprob_grads[i][t] = -norm * term.d_logprob;
      objective += term.value;
      ratio_sum += r[t];
      clipped += term.clipped ? 1 : 0;
    }
  }
  objective *= norm;
  rep.loss = -objective;
  rep.clip_fraction = total > 0 ? static_cast<double>(clipped) / total : 0.0;
  rep.mean_ratio = total > 0 ? ratio_sum / total : 0.0;
  rep.clipped_count = clipped;
  rep.token_count = total;
  return rep;
}

}  // namespace appo
