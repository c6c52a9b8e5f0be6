// SPDX-License-Identifier: Apache-2.0
#include "appo/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace appo {

SplitSource split_source_from_name(const std::string& name) {
  if (name == "accuracy") return SplitSource::Accuracy;
  if (name == "format") return SplitSource::Format;
  if (name == "combined") return SplitSource::Combined;
  throw ConfigError("unknown split source: " + name);
}

const char* split_source_name(SplitSource s) {
  switch (s) {
    case SplitSource::Accuracy: return "accuracy";
    case SplitSource::Format: return "format";
    case SplitSource::Combined: return "combined";
  }
  return "?";
}

void RunConfig::validate() const {
  if (group_size < 2) throw ConfigError("group_size must be >= 2");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (!std::isfinite(tau)) throw ConfigError("tau must be finite");
  if (k1 < 1 || k2 < 1 || k3 < 1) throw ConfigError("k1/k2/k3 must be >= 1");
  if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
  if (attention_layers < 1) throw ConfigError("attention_layers must be >= 1");
  if (inner_epochs < 1 || inner_epochs > 4)
    throw ConfigError("inner_epochs must be in [1, 4]");
  if (lr <= 0.0) throw ConfigError("lr must be > 0");
  model.validate();
  ObjectiveConfig obj;
  obj.clip_low = clip_low;
  obj.clip_high = clip_high;
  obj.kl_coeff = kl_coeff;
  obj.validate();
  effective_gen().validate();
}

GeneratorConfig RunConfig::effective_gen() const {
  GeneratorConfig g = gen;
  g.embed_dim = model.embed_dim;
  g.vocab_size = model.vocab_size;
  g.seed = mix_seed(seed, 0xd47aULL);
  return g;
}

nlohmann::ordered_json metrics_to_json(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["mean_reward"] = m.mean_reward;
  j["mean_accuracy"] = m.mean_accuracy;
  j["mean_entropy"] = m.mean_entropy;
  j["grad_norm"] = m.grad_norm;
  j["clip_fraction"] = m.clip_fraction;
  j["perception_hit_rate"] = m.perception_hit_rate;
  j["mean_weight"] = m.mean_weight;
  j["frac_tokens_reweighted"] = m.frac_tokens_reweighted;
  j["loss"] = m.loss;
  j["mean_target_frac"] = m.mean_target_frac;
  return j;
}

std::string metrics_header_line() {
  nlohmann::ordered_json j;
  j["schema"] = kMetricsSchema;
  return j.dump();
}

GroupSelection select_and_weight(const VisualLayout& layout,
                                 const std::vector<Response>& responses,
                                 const std::vector<RewardBreakdown>& rewards,
                                 const AnalyzeConfig& cfg, bool compute_weights) {
  GroupSelection sel;
  const int g = static_cast<int>(responses.size());

  std::vector<double> splitting(g);
  for (int i = 0; i < g; ++i) {
    switch (cfg.split_source) {
      case SplitSource::Accuracy: splitting[i] = rewards[i].accuracy; break;
      case SplitSource::Format: splitting[i] = rewards[i].format; break;
      case SplitSource::Combined: splitting[i] = rewards[i].combined; break;
    }
  }
  sel.split = split_by_reward(splitting, cfg.tau);

  const int captured = static_cast<int>(responses[0].attention.layers.size());
  const int layers_eff = std::min(cfg.attention_layers, captured);

  sel.frame_attn.resize(g);
  std::vector<std::vector<int>> focused(g);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < g; ++i) {
    sel.frame_attn[i] = frame_attention(responses[i].attention, layout, layers_eff);
    focused[i] = focused_frames(response_frame_score(sel.frame_attn[i], cfg.k1), cfg.k2);
  }

  auto [psi1, psi2] = union_focused(sel.split, focused);
  sel.targets = select_target_frames(psi1, psi2, cfg.strategy);

  if (compute_weights) {
    std::vector<int> lengths(g);
    for (int i = 0; i < g; ++i) lengths[i] = responses[i].length();
    sel.groups = build_perception_groups(responses, sel.targets, sel.frame_attn, cfg.k3);
    sel.raw = group_divergence(sel.groups, responses, cfg.slot_reduction);
    sel.normalized = minmax_normalize(sel.raw);
    sel.weights =
        token_weights(sel.groups, sel.normalized, cfg.alpha, lengths, cfg.weight_averaging);
    sel.weights_computed = true;
  }
  return sel;
}

namespace {

AnalyzeConfig selection_config(const RunConfig& cfg) {
  AnalyzeConfig a;
  a.tau = cfg.tau;
  a.k1 = cfg.k1;
  a.k2 = cfg.k2;
  a.k3 = cfg.k3;
  a.alpha = cfg.alpha;
  a.strategy = cfg.strategy;
  a.attention_layers = std::min(cfg.attention_layers, cfg.model.num_layers);
  a.split_source = cfg.split_source;
  a.slot_reduction = cfg.slot_reduction;
  a.weight_averaging = cfg.weight_averaging;
  return a;
}

void zero_grads(PolicyGrads& g) {
  g.for_each_tensor([](const std::string&, Mat& m) {
    std::fill(m.data.begin(), m.data.end(), 0.0);
  });
}

}  // namespace

TrainResult train(const RunConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const GeneratorConfig gen = cfg.effective_gen();
  const AnalyzeConfig sel_cfg = selection_config(cfg);
  const int b_count = cfg.batch_size;
  const int g_count = cfg.group_size;
  const int total_rollouts = b_count * g_count;
  const int alphabet = gen.answer_alphabet;

  ObjectiveConfig obj;
  obj.algorithm = cfg.algorithm;
  obj.clip_low = cfg.clip_low;
  obj.clip_high = cfg.clip_high;
  obj.kl_coeff = cfg.kl_coeff;

  TrainResult result;
  result.params = init_params(cfg.model, mix_seed(cfg.seed, 0x1a17ULL));

  std::vector<PolicyGrads> rollout_grads;
  rollout_grads.reserve(total_rollouts);
  for (int i = 0; i < total_rollouts; ++i) rollout_grads.push_back(zeros_like(result.params));
  PolicyGrads total_grads = zeros_like(result.params);

  const StopPredicate stop = [alphabet](const std::vector<int>& tokens) {
    return is_complete_answer(tokens, alphabet);
  };

  for (int step = 0; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    PolicySnapshot snapshot{result.params};

    std::vector<TaskInstance> instances(b_count);
    for (int b = 0; b < b_count; ++b)
      instances[b] = generate(gen, static_cast<std::uint64_t>(step) * b_count + b);

    // Rollouts are parallel; each writes only its own slot and derives its own
    // seed from (run seed, step, instance, member).
    std::vector<RolloutGroup> groups(b_count);
    for (int b = 0; b < b_count; ++b) {
      groups[b].layout = instances[b].layout;
      groups[b].responses.resize(g_count);
      groups[b].rewards.resize(g_count);
    }
#pragma omp parallel for schedule(static)
    for (int idx = 0; idx < total_rollouts; ++idx) {
      const int b = idx / g_count;
      const int g = idx % g_count;
      Response r = sample_rollout(snapshot, instances[b].question_tokens,
                                  instances[b].visual_tokens, cfg.model.max_response_len,
                                  1.0, mix_seed(cfg.seed, step, b, g), stop);
      groups[b].rewards[g] = reward(r, instances[b]);
      groups[b].responses[g] = std::move(r);
    }
    for (int b = 0; b < b_count; ++b) {
      groups[b].task_meta = {{"step", step},
                             {"instance", static_cast<int>(step) * b_count + b},
                             {"crucial_frame", instances[b].crucial_frame},
                             {"answer_token", instances[b].answer_token}};
    }

    // Selection diagnostics run for every algorithm; the weight stage only for
    // APPO.
    const bool want_weights = cfg.algorithm == Algorithm::Appo;
    std::vector<GroupSelection> selections(b_count);
#pragma omp parallel for schedule(static)
    for (int b = 0; b < b_count; ++b)
      selections[b] = select_and_weight(groups[b].layout, groups[b].responses,
                                        groups[b].rewards, sel_cfg, want_weights);

    std::vector<AdvantageVector> advs(b_count);
    for (int b = 0; b < b_count; ++b) {
      std::vector<double> rewards_combined(g_count);
      for (int g = 0; g < g_count; ++g) rewards_combined[g] = groups[b].rewards[g].combined;
      advs[b] = advantages(rewards_combined, obj.sigma_eps);
    }

    double batch_loss = 0.0;
    double clip_fraction = 0.0;
    double gnorm = 0.0;
    const double inv_b = 1.0 / b_count;

    for (int epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
      std::vector<TeacherForcedEval> evals(total_rollouts);
#pragma omp parallel for schedule(static)
      for (int idx = 0; idx < total_rollouts; ++idx) {
        const int b = idx / g_count;
        const int g = idx % g_count;
        evals[idx] = logprobs_under(result.params, instances[b].question_tokens,
                                    instances[b].visual_tokens,
                                    groups[b].responses[g].tokens);
      }

      std::vector<LossReport> reports(b_count);
      batch_loss = 0.0;
      long clipped_tokens = 0, token_total = 0;
      for (int b = 0; b < b_count; ++b) {
        std::vector<std::vector<double>> ratio_groups(g_count), kl_deltas(g_count);
        for (int g = 0; g < g_count; ++g) {
          const Response& r = groups[b].responses[g];
          const TeacherForcedEval& ev = evals[b * g_count + g];
          if (!all_finite(ev.logprobs) || !all_finite(r.old_logprobs))
            throw NumericError("non-finite logprobs at step " + std::to_string(step));
          ratio_groups[g] = ratios(ev.logprobs, r.old_logprobs);
          if (cfg.algorithm == Algorithm::Grpo) {
            kl_deltas[g].resize(r.length());
            for (int t = 0; t < r.length(); ++t)
              kl_deltas[g][t] = r.old_logprobs[t] - ev.logprobs[t];
          }
          token_total += r.length();
        }
        switch (cfg.algorithm) {
          case Algorithm::Grpo:
            reports[b] = grpo_loss(ratio_groups, advs[b], kl_deltas, obj);
            break;
          case Algorithm::Dapo:
            reports[b] = dapo_loss(ratio_groups, advs[b], obj);
            break;
          case Algorithm::Appo:
            reports[b] = appo_loss(ratio_groups, advs[b], selections[b].weights, obj);
            break;
        }
        batch_loss += reports[b].loss;
        clipped_tokens += reports[b].clipped_count;
      }
      batch_loss *= inv_b;
      if (!std::isfinite(batch_loss))
        throw NumericError("non-finite loss at step " + std::to_string(step));
      clip_fraction = token_total > 0 ? static_cast<double>(clipped_tokens) / token_total : 0.0;

#pragma omp parallel for schedule(static)
      for (int idx = 0; idx < total_rollouts; ++idx) {
        const int b = idx / g_count;
        const int g = idx % g_count;
        zero_grads(rollout_grads[idx]);
        std::vector<double> dlogprob = reports[b].logprob_grads[g];
        for (double& v : dlogprob) v *= inv_b;
        backward(result.params, evals[idx].vis, evals[idx].tape, dlogprob,
                 rollout_grads[idx]);
      }

      zero_grads(total_grads);
      for (int idx = 0; idx < total_rollouts; ++idx) accumulate(total_grads, rollout_grads[idx]);
      gnorm = grad_norm(total_grads);
      sgd_step(result.params, total_grads, cfg.lr);
    }

    StepMetrics m;
    m.step = step;
    double reward_sum = 0.0, acc_sum = 0.0, entropy_sum = 0.0;
    long entropy_count = 0;
    for (int b = 0; b < b_count; ++b) {
      for (int g = 0; g < g_count; ++g) {
        reward_sum += groups[b].rewards[g].combined;
        acc_sum += groups[b].rewards[g].accuracy;
        for (const TokenDistribution& d : groups[b].responses[g].distributions) {
          entropy_sum += token_entropy(d);
          ++entropy_count;
        }
      }
    }
    m.mean_reward = reward_sum / total_rollouts;
    m.mean_accuracy = acc_sum / total_rollouts;
    m.mean_entropy = entropy_count > 0 ? entropy_sum / entropy_count : 0.0;
    m.grad_norm = gnorm;
    m.clip_fraction = clip_fraction;
    m.loss = batch_loss;

    double hit_sum = 0.0, frac_sum = 0.0;
    for (int b = 0; b < b_count; ++b) {
      hit_sum += perception_hit_rate(selections[b].targets, instances[b]);
      frac_sum += static_cast<double>(selections[b].targets.frames.size()) /
                  groups[b].layout.num_frames;
    }
    m.perception_hit_rate = hit_sum / b_count;
    m.mean_target_frac = frac_sum / b_count;

    if (cfg.algorithm == Algorithm::Appo) {
      double w_sum = 0.0;
      long w_count = 0, reweighted = 0;
      for (int b = 0; b < b_count; ++b) {
        for (const std::vector<double>& row : selections[b].weights.weights) {
          for (double w : row) {
            w_sum += w;
            ++w_count;
            if (w != 1.0) ++reweighted;
          }
        }
      }
      m.mean_weight = w_count > 0 ? w_sum / w_count : 1.0;
      m.frac_tokens_reweighted =
          w_count > 0 ? static_cast<double>(reweighted) / w_count : 0.0;
    } else {
      m.mean_weight = 1.0;
      m.frac_tokens_reweighted = 0.0;
    }

    m.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(m);
    if (hooks.on_step) hooks.on_step(m, groups);
  }

  return result;
}

TrainResult train_to_files(const RunConfig& cfg, bool quiet) {
  cfg.validate();
  std::ofstream metrics(cfg.out);
  if (!metrics) throw IoError("cannot open metrics file for writing: " + cfg.out);
  metrics << metrics_header_line() << '\n';
  metrics.flush();

  std::ofstream trace;
  if (!cfg.trace_out.empty()) {
    trace.open(cfg.trace_out);
    if (!trace) throw IoError("cannot open trace file for writing: " + cfg.trace_out);
  }

  TrainHooks hooks;
  hooks.on_step = [&](const StepMetrics& m, const std::vector<RolloutGroup>& groups) {
    metrics << metrics_to_json(m).dump() << '\n';
    metrics.flush();
    if (trace.is_open()) append_trace(groups, trace);
    if (!quiet)
      std::printf("step %4d  reward %.4f  acc %.4f  entropy %.4f  hit %.3f  loss % .5f  %.2fs\n",
                  m.step, m.mean_reward, m.mean_accuracy, m.mean_entropy,
                  m.perception_hit_rate, m.loss, m.wall_time);
  };

  TrainResult result = train(cfg, hooks);
  if (!metrics) throw IoError("failed writing metrics file: " + cfg.out);

  const std::string ckpt =
      cfg.checkpoint_out.empty() ? cfg.out + ".checkpoint.json" : cfg.checkpoint_out;
  save_checkpoint(result.params, ckpt);
  return result;
}

namespace {

nlohmann::ordered_json divergence_json(const SlotDivergence& d) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const SlotDivergence::GroupValues& g : d.groups) out.push_back(g.values);
  return out;
}

}  // namespace

nlohmann::ordered_json analyze_trace(const std::string& trace_path, const AnalyzeConfig& cfg) {
  std::vector<RolloutGroup> groups = read_trace_file(trace_path);

  nlohmann::ordered_json report;
  report["schema"] = "appo-analysis/1";
  nlohmann::ordered_json jcfg;
  jcfg["tau"] = cfg.tau;
  jcfg["k1"] = cfg.k1;
  jcfg["k2"] = cfg.k2;
  jcfg["k3"] = cfg.k3;
  jcfg["alpha"] = cfg.alpha;
  jcfg["strategy"] = strategy_name(cfg.strategy);
  jcfg["attention_layers"] = cfg.attention_layers;
  jcfg["split_source"] = split_source_name(cfg.split_source);
  jcfg["slot_reduction"] = slot_reduction_name(cfg.slot_reduction);
  jcfg["weight_averaging"] = weight_averaging_name(cfg.weight_averaging);
  report["config"] = std::move(jcfg);

  nlohmann::ordered_json jgroups = nlohmann::ordered_json::array();
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const RolloutGroup& group = groups[gi];
    GroupSelection sel =
        select_and_weight(group.layout, group.responses, group.rewards, cfg, true);

    nlohmann::ordered_json jg;
    jg["index"] = gi;
    jg["split"] = {{"tau", cfg.tau},
                   {"high", sel.split.high_set},
                   {"low", sel.split.low_set}};
    jg["psi_s1"] = sel.targets.psi_s1;
    jg["psi_s2"] = sel.targets.psi_s2;
    nlohmann::ordered_json strategies;
    for (Strategy s : {Strategy::Hard, Strategy::Soft, Strategy::All})
      strategies[strategy_name(s)] =
          select_target_frames(sel.targets.psi_s1, sel.targets.psi_s2, s).frames;
    jg["targets"] = std::move(strategies);
    jg["selected"] = sel.targets.frames;

    nlohmann::ordered_json omega = nlohmann::ordered_json::array();
    for (const PerceptionGroups::Group& pg : sel.groups.groups) {
      nlohmann::ordered_json jo;
      jo["frame"] = pg.frame_index;
      jo["slots"] = pg.slots;
      omega.push_back(std::move(jo));
    }
    jg["omega"] = std::move(omega);
    jg["divergence"] = {{"raw", divergence_json(sel.raw)},
                        {"normalized", divergence_json(sel.normalized)}};

    double w_min = 1.0, w_max = 1.0, w_sum = 0.0;
    long w_count = 0;
    std::vector<long> counts(10, 0);
    for (const std::vector<double>& row : sel.weights.weights) {
      for (double w : row) {
        w_min = std::min(w_min, w);
        w_max = std::max(w_max, w);
        w_sum += w;
        ++w_count;
        int bin = 0;
        if (cfg.alpha > 0.0)
          bin = std::min(9, static_cast<int>((w - 1.0) / cfg.alpha * 10.0));
        counts[bin]++;
      }
    }
    nlohmann::ordered_json jw;
    jw["min"] = w_min;
    jw["max"] = w_max;
    jw["mean"] = w_count > 0 ? w_sum / w_count : 1.0;
    jw["bin_width"] = cfg.alpha / 10.0;
    jw["counts"] = counts;
    jg["weights"] = std::move(jw);
    jgroups.push_back(std::move(jg));
  }
  report["groups"] = std::move(jgroups);
  return report;
}

void gen_data(const GeneratorConfig& cfg, int count, const std::string& out_path) {
  if (count < 1) throw ConfigError("count must be >= 1");
  cfg.validate();
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot open dataset file for writing: " + out_path);
  for (int i = 0; i < count; ++i) {
    TaskInstance inst = generate(cfg, i);
    nlohmann::ordered_json j;
    j["version"] = "appo-data/1";
    j["index"] = i;
    j["layout"] = {{"num_frames", inst.layout.num_frames},
                   {"tokens_per_frame", inst.layout.tokens_per_frame}};
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (int v = 0; v < inst.visual_tokens.rows; ++v) {
      nlohmann::ordered_json row = nlohmann::ordered_json::array();
      for (int c = 0; c < inst.visual_tokens.cols; ++c) row.push_back(inst.visual_tokens(v, c));
      rows.push_back(std::move(row));
    }
    j["visual_tokens"] = std::move(rows);
    j["question_tokens"] = inst.question_tokens;
    j["crucial_frame"] = inst.crucial_frame;
    j["answer_token"] = inst.answer_token;
    j["distractor_frames"] = inst.distractor_frames;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing dataset file: " + out_path);
}

}  // namespace appo
