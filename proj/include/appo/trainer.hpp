// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "appo/env.hpp"
#include "appo/objective.hpp"
#include "appo/policy.hpp"
#include "appo/reweight.hpp"

namespace appo {

/// Which reward component drives the high/low split.
enum class SplitSource { Accuracy, Format, Combined };

SplitSource split_source_from_name(const std::string& name);
const char* split_source_name(SplitSource s);

struct RunConfig {
  Algorithm algorithm = Algorithm::Appo;
  int group_size = 8;   // G
  int batch_size = 16;  // task instances per step
  int steps = 100;
  double tau = 0.5;
  int k1 = 15;
  int k2 = 5;
  int k3 = 64;
  double alpha = 1.7;
  Strategy strategy = Strategy::Soft;
  int attention_layers = 3;  // clamped to the model depth
  double clip_low = 0.2;
  double clip_high = 0.28;
  double kl_coeff = 0.01;  // GRPO only
  SplitSource split_source = SplitSource::Accuracy;
  SlotReduction slot_reduction = SlotReduction::PerSlot;
  WeightAveraging weight_averaging = WeightAveraging::Membership;
  int inner_epochs = 1;  // max 4
  double lr = 0.2;
  std::uint64_t seed = 0;
  ModelConfig model;
  GeneratorConfig gen;  // embed_dim/vocab_size/seed are derived from model/seed

  std::string out = "metrics.jsonl";
  std::string checkpoint_out;  // default: <out>.checkpoint.json
  std::string trace_out;       // optional rollout-group dump

  void validate() const;
  /// gen with embed_dim/vocab_size synced to the model and the seed derived
  /// from the run seed.
  GeneratorConfig effective_gen() const;
};

/// One metrics line per training step. wall_time is measured for console
/// output only and is not serialized, keeping metrics files byte-reproducible.
struct StepMetrics {
  int step = 0;
  double mean_reward = 0.0;
  double mean_accuracy = 0.0;
  double mean_entropy = 0.0;
  double grad_norm = 0.0;
  double clip_fraction = 0.0;
  double perception_hit_rate = 0.0;
  double mean_weight = 1.0;
  double frac_tokens_reweighted = 0.0;
  double loss = 0.0;
  double mean_target_frac = 0.0;
  double wall_time = 0.0;
};

inline constexpr const char* kMetricsSchema = "appo-metrics/1";

nlohmann::ordered_json metrics_to_json(const StepMetrics& m);
std::string metrics_header_line();

struct TrainHooks {
  /// Called after every step with the step metrics and the step's groups.
  std::function<void(const StepMetrics&, const std::vector<RolloutGroup>&)> on_step;
};

struct TrainResult {
  std::vector<StepMetrics> metrics;
  PolicyParams params;
};

/// Runs the full loop: snapshot, sample G rollouts per instance, reward,
/// frame selection, re-weighting (APPO), loss, inner-epoch updates.
/// Deterministic in the config and seed.
TrainResult train(const RunConfig& cfg, const TrainHooks& hooks = {});

/// train() plus metrics/trace/checkpoint files and console progress.
TrainResult train_to_files(const RunConfig& cfg, bool quiet = false);

/// Offline analysis knobs (a subset of RunConfig).
struct AnalyzeConfig {
  double tau = 0.5;
  int k1 = 15;
  int k2 = 5;
  int k3 = 64;
  double alpha = 1.7;
  Strategy strategy = Strategy::Soft;
  int attention_layers = 3;
  SplitSource split_source = SplitSource::Accuracy;
  SlotReduction slot_reduction = SlotReduction::PerSlot;
  WeightAveraging weight_averaging = WeightAveraging::Membership;
};

/// Re-runs selection and re-weighting over a trace file and reports the
/// intermediates per group.
nlohmann::ordered_json analyze_trace(const std::string& trace_path, const AnalyzeConfig& cfg);

/// Writes `count` task instances as line-delimited JSON.
void gen_data(const GeneratorConfig& cfg, int count, const std::string& out_path);

/// Selection diagnostics shared by the trainer and the analyzer.
struct GroupSelection {
  RewardSplit split;
  std::vector<FrameAttentionMatrix> frame_attn;
  TargetFrames targets;
  PerceptionGroups groups;
  SlotDivergence raw;
  SlotDivergence normalized;
  TokenWeightMap weights;
  bool weights_computed = false;
};

/// Runs split -> frame attention -> scores -> focused -> unions -> strategy,
/// and optionally the divergence/weight stage. Never reads task_meta.
GroupSelection select_and_weight(const VisualLayout& layout,
                                 const std::vector<Response>& responses,
                                 const std::vector<RewardBreakdown>& rewards,
                                 const AnalyzeConfig& cfg, bool compute_weights);

}  // namespace appo
