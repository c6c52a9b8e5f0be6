// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "appo/reweight.hpp"

namespace appo {

enum class Algorithm { Grpo, Dapo, Appo };

Algorithm algorithm_from_name(const std::string& name);
const char* algorithm_name(Algorithm a);

/// Group-standardized rewards (population std). When the std falls below the
/// degenerate threshold every advantage is exactly 0.
struct AdvantageVector {
  std::vector<double> values;
  double mean_reward = 0.0;
  double std_reward = 0.0;
};

struct ObjectiveConfig {
  Algorithm algorithm = Algorithm::Appo;
  double clip_low = 0.2;    // epsilon_low
  double clip_high = 0.28;  // epsilon_high
  double kl_coeff = 0.01;   // beta, GRPO only
  double sigma_eps = 1e-6;

  void validate() const;
};

/// Scalar loss (minimization target, the negated objective) plus per-token
/// diagnostics. logprob_grads carries d(loss)/d(new_logprob) including the
/// objective's own normalization, ready for the policy backward pass.
struct LossReport {
  double loss = 0.0;
  std::vector<std::vector<double>> per_token_terms;
  std::vector<std::vector<double>> logprob_grads;
  double clip_fraction = 0.0;
  double mean_ratio = 0.0;
  long clipped_count = 0;
  long token_count = 0;
};

AdvantageVector advantages(const std::vector<double>& rewards, double sigma_eps = 1e-6);

/// Per-token importance ratios exp(new - old).
std::vector<double> ratios(const std::vector<double>& new_logprobs,
                           const std::vector<double>& old_logprobs);

/// GRPO: response-normalized clipped surrogate minus beta times the
/// nonnegative KL estimator exp(d) - d - 1 with d = logpi_ref - logpi_theta.
/// kl_deltas holds d per token.
LossReport grpo_loss(const std::vector<std::vector<double>>& ratio_groups,
                     const AdvantageVector& adv,
                     const std::vector<std::vector<double>>& kl_deltas,
                     const ObjectiveConfig& cfg);

/// DAPO: token-normalized clipped surrogate, no KL term.
LossReport dapo_loss(const std::vector<std::vector<double>>& ratio_groups,
                     const AdvantageVector& adv, const ObjectiveConfig& cfg);

/// APPO: DAPO's normalization with per-token weights multiplying the
/// advantage inside both branches of the clip.
LossReport appo_loss(const std::vector<std::vector<double>>& ratio_groups,
                     const AdvantageVector& adv, const TokenWeightMap& weights,
                     const ObjectiveConfig& cfg);

}  // namespace appo
