// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "appo/trainer.hpp"

namespace appo::selfcheck {

/// Deliberately broken variants for verifying that the suites can detect
/// faults. Only the selftest harness wires these in; the library code paths
/// are untouched.
enum class Fault { None, MinmaxDegenerate, KlSign };

Fault fault_from_name(const std::string& name);

struct SuiteResult {
  std::string name;
  long checked = 0;
  long failed = 0;
  double max_deviation = 0.0;
  bool ok() const { return failed == 0; }
};

/// Randomized rollout groups through the full selection + re-weighting
/// pipeline: every weight in [1, 1+alpha], non-members exactly 1, identical
/// distributions give unit weights.
SuiteResult weight_bound_suite(int cases, std::uint64_t seed, Fault fault = Fault::None);

/// KL nonnegativity, identity at equal arguments, and agreement with the
/// independent log-sum oracle.
SuiteResult kl_suite(int cases, std::uint64_t seed, Fault fault = Fault::None);

/// Frame attention vs the triple-loop oracle; top-k scores vs the sort
/// oracle; focused frames vs subset enumeration; unions vs the set oracle.
SuiteResult topk_oracle_suite(int cases, std::uint64_t seed);

/// Hard/Soft/All chain inclusion and equality with their set expressions.
SuiteResult set_algebra_suite(int cases, std::uint64_t seed);

/// Slot divergence and the three losses against their independent oracles
/// (1e-9; 1e-12 for the weighted token-level loss).
SuiteResult loss_oracle_suite(int cases, std::uint64_t seed);

/// Analytic gradients vs central finite differences (h = 1e-5, rel err 1e-4)
/// over random (model, instance, algorithm) triples including clipped
/// regimes.
SuiteResult gradient_suite(int triples, std::uint64_t seed);

/// Two short in-memory runs: APPO with alpha 0 must reproduce DAPO's metric
/// lines byte for byte.
SuiteResult reduction_identity_suite(std::uint64_t seed);

/// Scaled versions of all suites. `scale` = 1 matches the selftest defaults.
std::vector<SuiteResult> run_all(int scale, std::uint64_t seed, Fault fault = Fault::None);

}  // namespace appo::selfcheck
