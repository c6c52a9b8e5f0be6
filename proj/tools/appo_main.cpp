// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "appo/selfcheck.hpp"
#include "appo/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct CliOptions {
  appo::RunConfig run;
  std::string algo = "appo";
  std::string strategy = "soft";
  std::string split_source = "accuracy";
  std::string slot_reduction = "per_slot";
  std::string weight_averaging = "membership";
  bool quiet = false;
};

void add_selection_flags(CLI::App* cmd, appo::AnalyzeConfig& cfg, std::string& strategy,
                         std::string& split_source, std::string& slot_reduction,
                         std::string& weight_averaging) {
  cmd->add_option("--tau", cfg.tau, "Reward threshold for the high/low split");
  cmd->add_option("--k1", cfg.k1, "Response tokens averaged per frame score");
  cmd->add_option("--k2", cfg.k2, "Frames kept per response");
  cmd->add_option("--k3", cfg.k3, "Perception tokens kept per response and frame");
  cmd->add_option("--alpha", cfg.alpha, "Token weight scaling");
  cmd->add_option("--strategy", strategy, "Target-frame strategy: hard|soft|all");
  cmd->add_option("--attn-layers", cfg.attention_layers,
                  "Attention layers averaged (from the last)");
  cmd->add_option("--split-source", split_source,
                  "Reward driving the split: accuracy|format|combined");
  cmd->add_option("--slot-reduction", slot_reduction,
                  "Divergence reduction: per_slot|per_token");
  cmd->add_option("--weight-averaging", weight_averaging,
                  "Multi-group combination: membership|literal_1_over_K");
}

void resolve_selection(appo::AnalyzeConfig& cfg, const std::string& strategy,
                       const std::string& split_source, const std::string& slot_reduction,
                       const std::string& weight_averaging) {
  cfg.strategy = appo::strategy_from_name(strategy);
  cfg.split_source = appo::split_source_from_name(split_source);
  cfg.slot_reduction = appo::slot_reduction_from_name(slot_reduction);
  cfg.weight_averaging = appo::weight_averaging_from_name(weight_averaging);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy-scale trainer and analyzer for attention-guided perception policy "
               "optimization (GRPO/DAPO/APPO)"};
  app.require_subcommand(1);

  // ---- train ----
  CliOptions opt;
  appo::AnalyzeConfig train_sel;
  CLI::App* train_cmd = app.add_subcommand("train", "Run the training loop");
  train_cmd->set_config("--config", "", "Read defaults from an INI file");
  train_cmd->add_option("--algo", opt.algo, "Algorithm: grpo|dapo|appo");
  train_cmd->add_option("--seed", opt.run.seed, "Run seed");
  train_cmd->add_option("--steps", opt.run.steps, "Training steps");
  train_cmd->add_option("--group-size", opt.run.group_size, "Rollouts per instance (G)");
  train_cmd->add_option("--batch-size", opt.run.batch_size, "Instances per step");
  add_selection_flags(train_cmd, train_sel, opt.strategy, opt.split_source,
                      opt.slot_reduction, opt.weight_averaging);
  train_cmd->add_option("--clip-low", opt.run.clip_low, "Lower clip bound");
  train_cmd->add_option("--clip-high", opt.run.clip_high, "Upper clip bound");
  train_cmd->add_option("--kl-coeff", opt.run.kl_coeff, "KL coefficient (GRPO)");
  train_cmd->add_option("--inner-epochs", opt.run.inner_epochs, "Updates per batch (1-4)");
  train_cmd->add_option("--lr", opt.run.lr, "Learning rate");
  train_cmd->add_option("--out", opt.run.out, "Metrics file (JSON lines)");
  train_cmd->add_option("--checkpoint-out", opt.run.checkpoint_out,
                        "Checkpoint path (default <out>.checkpoint.json)");
  train_cmd->add_option("--trace-out", opt.run.trace_out, "Rollout trace dump (JSON lines)");
  train_cmd->add_option("--vocab-size", opt.run.model.vocab_size, "Vocabulary size");
  train_cmd->add_option("--embed-dim", opt.run.model.embed_dim, "Embedding width");
  train_cmd->add_option("--num-heads", opt.run.model.num_heads, "Attention heads");
  train_cmd->add_option("--num-layers", opt.run.model.num_layers, "Transformer layers");
  train_cmd->add_option("--max-response-len", opt.run.model.max_response_len,
                        "Maximum generated tokens");
  train_cmd->add_option("--frames", opt.run.gen.num_frames, "Video frames (T)");
  train_cmd->add_option("--tokens-per-frame", opt.run.gen.tokens_per_frame,
                        "Visual tokens per frame");
  train_cmd->add_option("--alphabet", opt.run.gen.answer_alphabet, "Answer alphabet size");
  train_cmd->add_option("--snr", opt.run.gen.snr, "Signature signal-to-noise ratio");
  train_cmd->add_flag("--quiet", opt.quiet, "Suppress per-step console output");

  // ---- analyze ----
  std::string analyze_trace_path;
  std::string analyze_out;
  appo::AnalyzeConfig analyze_cfg;
  std::string a_strategy = "soft", a_split = "accuracy", a_slot = "per_slot",
              a_avg = "membership";
  CLI::App* analyze_cmd =
      app.add_subcommand("analyze", "Re-run selection and re-weighting over a trace");
  analyze_cmd->set_config("--config", "", "Read defaults from an INI file");
  analyze_cmd->add_option("trace", analyze_trace_path, "Trace file path")->required();
  add_selection_flags(analyze_cmd, analyze_cfg, a_strategy, a_split, a_slot, a_avg);
  analyze_cmd->add_option("--out", analyze_out, "Report path (default: stdout)");

  // ---- selftest ----
  int selftest_scale = 1;
  std::uint64_t selftest_seed = 0;
  std::string fault_name = "none";
  CLI::App* selftest_cmd =
      app.add_subcommand("selftest", "Run the built-in invariant suites");
  selftest_cmd->add_option("--scale", selftest_scale, "Case-count multiplier")
      ->check(CLI::Range(1, 100));
  selftest_cmd->add_option("--seed", selftest_seed, "Suite seed");
  selftest_cmd->add_option("--inject-fault", fault_name,
                           "Fault demo: none|minmax-degenerate|kl-sign");

  // ---- gen-data ----
  appo::GeneratorConfig gen_cfg;
  int gen_count = 1;
  std::string gen_out = "dataset.jsonl";
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "Write task instances to a file");
  gen_cmd->add_option("--count", gen_count, "Number of instances")->required();
  gen_cmd->add_option("--out", gen_out, "Output path");
  gen_cmd->add_option("--seed", gen_cfg.seed, "Generator seed");
  gen_cmd->add_option("--frames", gen_cfg.num_frames, "Video frames (T)");
  gen_cmd->add_option("--tokens-per-frame", gen_cfg.tokens_per_frame,
                      "Visual tokens per frame");
  gen_cmd->add_option("--alphabet", gen_cfg.answer_alphabet, "Answer alphabet size");
  gen_cmd->add_option("--snr", gen_cfg.snr, "Signature signal-to-noise ratio");
  gen_cmd->add_option("--embed-dim", gen_cfg.embed_dim, "Visual token width");
  gen_cmd->add_option("--vocab-size", gen_cfg.vocab_size, "Vocabulary size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (train_cmd->parsed()) {
      opt.run.algorithm = appo::algorithm_from_name(opt.algo);
      resolve_selection(train_sel, opt.strategy, opt.split_source, opt.slot_reduction,
                        opt.weight_averaging);
      opt.run.tau = train_sel.tau;
      opt.run.k1 = train_sel.k1;
      opt.run.k2 = train_sel.k2;
      opt.run.k3 = train_sel.k3;
      opt.run.alpha = train_sel.alpha;
      opt.run.strategy = train_sel.strategy;
      opt.run.attention_layers = train_sel.attention_layers;
      opt.run.split_source = train_sel.split_source;
      opt.run.slot_reduction = train_sel.slot_reduction;
      opt.run.weight_averaging = train_sel.weight_averaging;
      appo::train_to_files(opt.run, opt.quiet);
      return kExitOk;
    }

    if (analyze_cmd->parsed()) {
      resolve_selection(analyze_cfg, a_strategy, a_split, a_slot, a_avg);
      nlohmann::ordered_json report = appo::analyze_trace(analyze_trace_path, analyze_cfg);
      if (analyze_out.empty()) {
        std::cout << report.dump(2) << '\n';
      } else {
        std::ofstream out(analyze_out);
        if (!out) throw appo::IoError("cannot open report file: " + analyze_out);
        out << report.dump(2) << '\n';
        if (!out) throw appo::IoError("failed writing report file: " + analyze_out);
      }
      return kExitOk;
    }

    if (selftest_cmd->parsed()) {
      const appo::selfcheck::Fault fault = appo::selfcheck::fault_from_name(fault_name);
      std::vector<appo::selfcheck::SuiteResult> results =
          appo::selfcheck::run_all(selftest_scale, selftest_seed, fault);
      bool all_ok = true;
      for (const appo::selfcheck::SuiteResult& r : results) {
        std::printf("%-20s %6ld checked  %4ld failed  max dev %.3e  [%s]\n", r.name.c_str(),
                    r.checked, r.failed, r.max_deviation, r.ok() ? "ok" : "FAIL");
        all_ok = all_ok && r.ok();
      }
      return all_ok ? kExitOk : 1;
    }

    if (gen_cmd->parsed()) {
      appo::gen_data(gen_cfg, gen_count, gen_out);
      return kExitOk;
    }
  } catch (const appo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const appo::ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const appo::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const appo::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitOk;
}
