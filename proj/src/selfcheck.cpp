// SPDX-License-Identifier: Apache-2.0
#include "appo/selfcheck.hpp"

#include <algorithm>
#include <cmath>

#include "appo/reference.hpp"

namespace appo::selfcheck {

Fault fault_from_name(const std::string& name) {
  if (name == "none") return Fault::None;
  if (name == "minmax-degenerate") return Fault::MinmaxDegenerate;
  if (name == "kl-sign") return Fault::KlSign;
  throw ConfigError("unknown fault: " + name);
}

namespace {

TokenDistribution random_distribution(Prng& rng, int vocab) {
  TokenDistribution d;
  d.probs.resize(vocab);
  double mx = -1e300;
  std::vector<double> logits(vocab);
  for (int v = 0; v < vocab; ++v) {
    logits[v] = 2.0 * rng.normal();
    mx = std::max(mx, logits[v]);
  }
  double sum = 0.0;
  for (int v = 0; v < vocab; ++v) {
    d.probs[v] = std::exp(logits[v] - mx);
    sum += d.probs[v];
  }
  for (double& p : d.probs) p /= sum;
  return d;
}

Mat random_attention_rows(Prng& rng, int rows, int cols) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (int c = 0; c < cols; ++c) {
      m(r, c) = std::exp(rng.normal());
      sum += m(r, c);
    }
    for (int c = 0; c < cols; ++c) m(r, c) /= sum;
  }
  return m;
}

RolloutGroup random_group(Prng& rng, int g, int frames, int vocab, int max_len, int layers,
                          bool identical_distributions = false) {
  RolloutGroup group;
  group.layout.num_frames = frames;
  group.layout.tokens_per_frame.resize(frames);
  for (int t = 0; t < frames; ++t) group.layout.tokens_per_frame[t] = 1 + rng.uniform_int(3);
  const int v_total = group.layout.total_tokens();

  TokenDistribution shared = random_distribution(rng, vocab);
  for (int i = 0; i < g; ++i) {
    Response r;
    const int len = 1 + rng.uniform_int(max_len);
    for (int t = 0; t < len; ++t) {
      r.distributions.push_back(identical_distributions ? shared
                                                        : random_distribution(rng, vocab));
      const int tok = rng.uniform_int(vocab);
      r.tokens.push_back(tok);
      r.old_logprobs.push_back(std::log(r.distributions.back().probs[tok]));
    }
    for (int l = 0; l < layers; ++l)
      r.attention.layers.push_back(random_attention_rows(rng, len, v_total));
    group.responses.push_back(std::move(r));
    group.rewards.push_back(RewardBreakdown::make(rng.uniform_int(2), rng.uniform_int(2)));
  }
  return group;
}

SlotDivergence broken_minmax(const SlotDivergence& raw) {
  SlotDivergence out = minmax_normalize(raw);
  for (size_t k = 0; k < raw.groups.size(); ++k) {
    if (raw.groups[k].values.empty()) continue;
    double lo = raw.groups[k].values[0], hi = raw.groups[k].values[0];
    for (double v : raw.groups[k].values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi == lo) std::fill(out.groups[k].values.begin(), out.groups[k].values.end(), 1.0);
  }
  return out;
}

}  // namespace

SuiteResult weight_bound_suite(int cases, std::uint64_t seed, Fault fault) {
  SuiteResult result{"weight-bounds"};
  Prng rng(mix_seed(seed, 0x77));
  AnalyzeConfig cfg;
  for (int it = 0; it < cases; ++it) {
    const int g = 2 + rng.uniform_int(7);
    const int frames = 2 + rng.uniform_int(15);
    const int vocab = 4 + rng.uniform_int(61);
    const bool identical = it % 8 == 0;
    RolloutGroup group = random_group(rng, g, frames, vocab, 8, 2, identical);
    const double alpha = it % 5 == 0 ? 0.0 : 0.2 + 2.5 * rng.uniform();
    cfg.k1 = 1 + rng.uniform_int(15);
    cfg.k2 = 1 + rng.uniform_int(5);
    cfg.k3 = 1 + rng.uniform_int(8);
    cfg.alpha = alpha;

    std::vector<double> splitting(g);
    for (int i = 0; i < g; ++i) splitting[i] = group.rewards[i].accuracy;
    RewardSplit split = split_by_reward(splitting, 0.5);
    std::vector<FrameAttentionMatrix> fas(g);
    std::vector<std::vector<int>> focused(g);
    std::vector<int> lengths(g);
    for (int i = 0; i < g; ++i) {
      fas[i] = frame_attention(group.responses[i].attention, group.layout, 2);
      focused[i] = focused_frames(response_frame_score(fas[i], cfg.k1), cfg.k2);
      lengths[i] = group.responses[i].length();
    }
    auto [psi1, psi2] = union_focused(split, focused);
    TargetFrames targets = select_target_frames(psi1, psi2, Strategy::Soft);
    PerceptionGroups groups = build_perception_groups(group.responses, targets, fas, cfg.k3);
    SlotDivergence raw = group_divergence(groups, group.responses);
    SlotDivergence norm =
        fault == Fault::MinmaxDegenerate ? broken_minmax(raw) : minmax_normalize(raw);
    TokenWeightMap w = token_weights(groups, norm, alpha, lengths);

    bool bad = false;
    for (size_t i = 0; i < w.weights.size(); ++i) {
      for (size_t t = 0; t < w.weights[i].size(); ++t) {
        const double wt = w.weights[i][t];
        if (wt < 1.0 || wt > 1.0 + alpha + 1e-12) bad = true;
        if (w.membership_count[i][t] == 0 && wt != 1.0) bad = true;
        if ((identical || alpha == 0.0) && wt != 1.0) bad = true;
      }
    }
    ++result.checked;
    result.failed += bad ? 1 : 0;
  }
  return result;
}

SuiteResult kl_suite(int cases, std::uint64_t seed, Fault fault) {
  SuiteResult result{"kl-divergence"};
  Prng rng(mix_seed(seed, 0x6b6c));
  const double sign = fault == Fault::KlSign ? -1.0 : 1.0;
  for (int it = 0; it < cases; ++it) {
    const int vocab = 2 + rng.uniform_int(31);
    TokenDistribution p = random_distribution(rng, vocab);
    TokenDistribution q = random_distribution(rng, vocab);
    const double kl = sign * kl_divergence(p, q);
    const double kl_self = sign * kl_divergence(p, p);
    const double dev = std::abs(kl - ref::kl_divergence(p, q));
    result.max_deviation = std::max(result.max_deviation, dev);
    const bool bad = kl < 0.0 || std::abs(kl_self) > 1e-9 || dev > 1e-9;
    ++result.checked;
    result.failed += bad ? 1 : 0;
  }
  return result;
}

SuiteResult topk_oracle_suite(int cases, std::uint64_t seed) {
  SuiteResult result{"topk-oracles"};
  Prng rng(mix_seed(seed, 0x746b));
  for (int it = 0; it < cases; ++it) {
    const int frames = 2 + rng.uniform_int(7);
    RolloutGroup group = random_group(rng, 2 + rng.uniform_int(5), frames, 8, 8, 3);
    bool bad = false;
    double dev = 0.0;

    // frame attention vs triple loop
    const int n_layers = 1 + rng.uniform_int(3);
    FrameAttentionMatrix fa =
        frame_attention(group.responses[0].attention, group.layout, n_layers);
    Mat want = ref::frame_attention(group.responses[0].attention, group.layout, n_layers);
    for (size_t i = 0; i < want.data.size(); ++i)
      dev = std::max(dev, std::abs(fa.values.data[i] - want.data[i]));

    // scores vs sort oracle
    const int k1 = 1 + rng.uniform_int(12);
    std::vector<double> scores = response_frame_score(fa, k1);
    std::vector<double> ref_scores = ref::response_frame_score(fa.values, k1);
    for (int t = 0; t < frames; ++t) dev = std::max(dev, std::abs(scores[t] - ref_scores[t]));

    // focused frames vs subset enumeration (quantized scores force ties)
    std::vector<double> tied(frames);
    for (double& s : tied) s = 0.25 * rng.uniform_int(5);
    const int k2 = 1 + rng.uniform_int(4);
    if (focused_frames(tied, k2) != ref::focused_frames(tied, k2)) bad = true;
    if (focused_frames(scores, k2) != ref::focused_frames(scores, k2)) bad = true;

    // unions vs the set oracle
    std::vector<std::vector<int>> per_resp(group.group_size());
    for (auto& s : per_resp) {
      for (int j = 0; j < rng.uniform_int(5); ++j) s.push_back(rng.uniform_int(frames));
      std::sort(s.begin(), s.end());
      s.erase(std::unique(s.begin(), s.end()), s.end());
    }
    std::vector<double> splitting(group.group_size());
    for (int i = 0; i < group.group_size(); ++i) splitting[i] = group.rewards[i].combined;
    RewardSplit split = split_by_reward(splitting, 0.5);
    if (union_focused(split, per_resp) != ref::union_focused(split, per_resp)) bad = true;

    result.max_deviation = std::max(result.max_deviation, dev);
    if (dev > 1e-9) bad = true;
    ++result.checked;
    result.failed += bad ? 1 : 0;
  }
  return result;
}

SuiteResult set_algebra_suite(int cases, std::uint64_t seed) {
  SuiteResult result{"set-algebra"};
  Prng rng(mix_seed(seed, 0x5e7));
  for (int it = 0; it < cases; ++it) {
    const int t_count = 2 + rng.uniform_int(15);
    std::vector<int> psi1, psi2;
    for (int f = 0; f < t_count; ++f) {
      if (rng.uniform() < 0.4) psi1.push_back(f);
      if (rng.uniform() < 0.4) psi2.push_back(f);
    }
    std::vector<int> hard = select_target_frames(psi1, psi2, Strategy::Hard).frames;
    std::vector<int> soft = select_target_frames(psi1, psi2, Strategy::Soft).frames;
    std::vector<int> all = select_target_frames(psi1, psi2, Strategy::All).frames;
    bool bad = !std::includes(soft.begin(), soft.end(), hard.begin(), hard.end()) ||
               !std::includes(all.begin(), all.end(), soft.begin(), soft.end());
    if (hard != ref::select_target_frames(psi1, psi2, Strategy::Hard)) bad = true;
    if (soft != ref::select_target_frames(psi1, psi2, Strategy::Soft)) bad = true;
    if (all != ref::select_target_frames(psi1, psi2, Strategy::All)) bad = true;
    ++result.checked;
    result.failed += bad ? 1 : 0;
  }
  return result;
}

SuiteResult loss_oracle_suite(int cases, std::uint64_t seed) {
  SuiteResult result{"loss-oracles"};
  Prng rng(mix_seed(seed, 0x1055));
  ObjectiveConfig cfg;
  for (int it = 0; it < cases; ++it) {
    const int g = 2 + rng.uniform_int(6);
    std::vector<std::vector<double>> ratio_groups(g), kl_deltas(g), weights(g);
    std::vector<double> adv_values(g);
    std::vector<int> lengths(g);
    for (int i = 0; i < g; ++i) {
      const int len = 1 + rng.uniform_int(8);
      lengths[i] = len;
      adv_values[i] = rng.normal();
      for (int t = 0; t < len; ++t) {
        ratio_groups[i].push_back(std::exp(0.5 * rng.normal()));
        kl_deltas[i].push_back(0.3 * rng.normal());
        weights[i].push_back(1.0 + 1.7 * rng.uniform());
      }
    }
    AdvantageVector adv;
    adv.values = adv_values;
    TokenWeightMap wm = unit_weights(lengths);
    wm.weights = weights;

    double dev = 0.0;
    LossReport la = appo_loss(ratio_groups, adv, wm, cfg);
    dev = std::max(dev, std::abs(-la.loss - ref::appo_objective(ratio_groups, adv_values,
                                                                weights, cfg.clip_low,
                                                                cfg.clip_high)));
    bool bad = dev > 1e-12;

    LossReport ld = dapo_loss(ratio_groups, adv, cfg);
    const double dd = std::abs(-ld.loss - ref::dapo_objective(ratio_groups, adv_values,
                                                              cfg.clip_low, cfg.clip_high));
    LossReport lg = grpo_loss(ratio_groups, adv, kl_deltas, cfg);
    const double dg =
        std::abs(-lg.loss - ref::grpo_objective(ratio_groups, adv_values, kl_deltas,
                                                cfg.clip_low, cfg.clip_high, cfg.kl_coeff));
    if (dd > 1e-9 || dg > 1e-9) bad = true;

    // slot divergence vs its direct recomputation
    RolloutGroup group = random_group(rng, 3, 3, 8, 5, 1);
    std::vector<FrameAttentionMatrix> fas(3);
    for (int i = 0; i < 3; ++i)
      fas[i] = frame_attention(group.responses[i].attention, group.layout, 1);
    TargetFrames targets;
    targets.frames = {0, 2};
    PerceptionGroups pg = build_perception_groups(group.responses, targets, fas, 3);
    SlotDivergence da = group_divergence(pg, group.responses);
    SlotDivergence db = ref::group_divergence(pg, group.responses, SlotReduction::PerSlot);
    double ddev = 0.0;
    for (size_t k = 0; k < da.groups.size(); ++k)
      for (size_t j = 0; j < da.groups[k].values.size(); ++j)
        ddev = std::max(ddev, std::abs(da.groups[k].values[j] - db.groups[k].values[j]));
    if (ddev > 1e-9) bad = true;

    result.max_deviation = std::max({result.max_deviation, dev, dd, dg, ddev});
    ++result.checked;
    result.failed += bad ? 1 : 0;
  }
  return result;
}

SuiteResult gradient_suite(int triples, std::uint64_t seed) {
  SuiteResult result{"gradient-fd"};
  Prng rng(mix_seed(seed, 0x67d));
  const double h = 1e-5;

  for (int it = 0; it < triples; ++it) {
    ModelConfig model;
    model.vocab_size = 8 + rng.uniform_int(3);
    model.embed_dim = 8;
    model.num_heads = 1 + rng.uniform_int(2);
    model.num_layers = 1 + rng.uniform_int(2);
    model.max_response_len = 5;
    GeneratorConfig gen;
    gen.num_frames = 2 + rng.uniform_int(2);
    gen.tokens_per_frame = 2;
    gen.answer_alphabet = 2;
    gen.embed_dim = model.embed_dim;
    gen.vocab_size = model.vocab_size;
    gen.seed = rng.next_u64();
    const Algorithm algo = it % 3 == 0   ? Algorithm::Appo
                           : it % 3 == 1 ? Algorithm::Grpo
                                         : Algorithm::Dapo;

    TaskInstance inst = generate(gen, it);
    PolicySnapshot snap{init_params(model, rng.next_u64())};
    const int g_count = 2 + rng.uniform_int(2);
    std::vector<Response> rollouts;
    const int alphabet = gen.answer_alphabet;
    for (int g = 0; g < g_count; ++g)
      rollouts.push_back(sample_rollout(
          snap, inst.question_tokens, inst.visual_tokens, 4, 1.0, rng.next_u64(),
          [alphabet](const std::vector<int>& t) { return is_complete_answer(t, alphabet); }));

    std::vector<double> rewards(g_count);
    for (double& r : rewards) r = rng.uniform_int(2);
    if (rewards == std::vector<double>(g_count, rewards[0])) rewards[0] = 1.0 - rewards[0];
    AdvantageVector adv = advantages(rewards);
    std::vector<int> lengths;
    for (const Response& r : rollouts) lengths.push_back(r.length());
    TokenWeightMap weights = unit_weights(lengths);
    for (auto& row : weights.weights)
      for (double& w : row) w = 1.0 + 1.7 * rng.uniform();
    ObjectiveConfig obj;
    obj.algorithm = algo;

    // evaluate away from the snapshot so ratios leave 1 and clipping engages
    PolicyParams params = snap.params;
    {
      PolicyGrads noise = zeros_like(params);
      Prng nrng(rng.next_u64());
      noise.for_each_tensor([&](const std::string&, Mat& m) {
        for (double& v : m.data) v = nrng.normal();
      });
      sgd_step(params, noise, 0.02);
    }

    auto loss_at = [&](const PolicyParams& p, PolicyGrads* grads) {
      std::vector<std::vector<double>> ratio_groups(g_count), kl_deltas(g_count);
      std::vector<TeacherForcedEval> evals(g_count);
      for (int g = 0; g < g_count; ++g) {
        evals[g] = logprobs_under(p, inst.question_tokens, inst.visual_tokens,
                                  rollouts[g].tokens);
        ratio_groups[g] = ratios(evals[g].logprobs, rollouts[g].old_logprobs);
        kl_deltas[g].resize(rollouts[g].length());
        for (int t = 0; t < rollouts[g].length(); ++t)
          kl_deltas[g][t] = rollouts[g].old_logprobs[t] - evals[g].logprobs[t];
      }
      LossReport rep;
      switch (algo) {
        case Algorithm::Grpo: rep = grpo_loss(ratio_groups, adv, kl_deltas, obj); break;
        case Algorithm::Dapo: rep = dapo_loss(ratio_groups, adv, obj); break;
        case Algorithm::Appo: rep = appo_loss(ratio_groups, adv, weights, obj); break;
      }
      if (grads)
        for (int g = 0; g < g_count; ++g)
          backward(p, evals[g].vis, evals[g].tape, rep.logprob_grads[g], *grads);
      return rep.loss;
    };

    PolicyGrads grads = zeros_like(params);
    loss_at(params, &grads);

    std::vector<Mat*> pm;
    std::vector<const Mat*> gm;
    params.for_each_tensor([&](const std::string&, Mat& m) { pm.push_back(&m); });
    grads.for_each_tensor([&](const std::string&, const Mat& m) { gm.push_back(&m); });

    double max_rel = 0.0;
    for (size_t ti = 0; ti < pm.size(); ++ti) {
      for (size_t k = 0; k < pm[ti]->data.size(); ++k) {
        const double analytic = gm[ti]->data[k];
        if (std::abs(analytic) <= 1e-8) continue;
        const double saved = pm[ti]->data[k];
        pm[ti]->data[k] = saved + h;
        const double lp = loss_at(params, nullptr);
        pm[ti]->data[k] = saved - h;
        const double lm = loss_at(params, nullptr);
        pm[ti]->data[k] = saved;
        const double fd = (lp - lm) / (2.0 * h);
        const double rel =
            std::abs(analytic - fd) / std::max(std::abs(analytic), std::abs(fd));
        max_rel = std::max(max_rel, rel);
      }
    }
    result.max_deviation = std::max(result.max_deviation, max_rel);
    ++result.checked;
    result.failed += max_rel > 1e-4 ? 1 : 0;
  }
  return result;
}

SuiteResult reduction_identity_suite(std::uint64_t seed) {
  SuiteResult result{"reduction-identity"};
  RunConfig base;
  base.group_size = 4;
  base.batch_size = 4;
  base.steps = 8;
  base.seed = seed;
  base.model.vocab_size = 16;
  base.model.embed_dim = 16;
  base.model.num_layers = 2;
  base.model.max_response_len = 6;
  base.gen.num_frames = 4;
  base.gen.tokens_per_frame = 2;
  base.k2 = 2;
  base.k3 = 4;

  RunConfig appo_cfg = base;
  appo_cfg.algorithm = Algorithm::Appo;
  appo_cfg.alpha = 0.0;
  RunConfig dapo_cfg = base;
  dapo_cfg.algorithm = Algorithm::Dapo;

  TrainResult a = train(appo_cfg);
  TrainResult d = train(dapo_cfg);
  result.checked = static_cast<long>(a.metrics.size());
  if (a.metrics.size() != d.metrics.size()) {
    result.failed = 1;
    return result;
  }
  for (size_t s = 0; s < a.metrics.size(); ++s)
    if (metrics_to_json(a.metrics[s]).dump() != metrics_to_json(d.metrics[s]).dump())
      ++result.failed;
  return result;
}

std::vector<SuiteResult> run_all(int scale, std::uint64_t seed, Fault fault) {
  std::vector<SuiteResult> results;
  results.push_back(weight_bound_suite(1000 * scale, seed, fault));
  results.push_back(kl_suite(1000 * scale, seed, fault));
  results.push_back(topk_oracle_suite(200 * scale, seed));
  results.push_back(set_algebra_suite(2000 * scale, seed));
  results.push_back(loss_oracle_suite(200 * scale, seed));
  results.push_back(gradient_suite(5 * scale, seed));
  results.push_back(reduction_identity_suite(seed));
  return results;
}

}  // namespace appo::selfcheck
