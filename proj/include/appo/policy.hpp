// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "appo/trace.hpp"

namespace appo {

struct ModelConfig {
  int vocab_size = 32;
  int embed_dim = 32;
  int num_heads = 2;
  int num_layers = 2;
  int max_response_len = 12;

  int head_dim() const { return embed_dim / num_heads; }
  int ffn_dim() const { return 2 * embed_dim; }
  void validate() const;
};

/// All trainable tensors. Every linear map is stored as (in x out) so the
/// forward is y = x * W throughout.
struct LayerParams {
  Mat wq, wk, wv, wo;  // causal self-attention
  Mat cq, ck, cv, co;  // cross-attention onto visual tokens
  Mat w1, w2;          // feed-forward (tanh)
};

struct PolicyParams {
  ModelConfig cfg;
  Mat tok_emb;   // vocab x d
  Mat vis_proj;  // d x d, applied to raw visual-token vectors
  std::vector<LayerParams> layers;
  Mat out_proj;  // d x vocab

  /// Visits every tensor in a fixed order (also the reduction order for
  /// gradient accumulation and the serialization order).
  template <typename F>
  void for_each_tensor(F&& f) {
    f("tok_emb", tok_emb);
    f("vis_proj", vis_proj);
    for (size_t l = 0; l < layers.size(); ++l) {
      std::string p = "layer" + std::to_string(l) + ".";
      f(p + "wq", layers[l].wq);
      f(p + "wk", layers[l].wk);
      f(p + "wv", layers[l].wv);
      f(p + "wo", layers[l].wo);
      f(p + "cq", layers[l].cq);
      f(p + "ck", layers[l].ck);
      f(p + "cv", layers[l].cv);
      f(p + "co", layers[l].co);
      f(p + "w1", layers[l].w1);
      f(p + "w2", layers[l].w2);
    }
    f("out_proj", out_proj);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<PolicyParams*>(this)->for_each_tensor(
        [&](const std::string& name, Mat& m) { f(name, const_cast<const Mat&>(m)); });
  }
};

/// Gradients mirror the parameter layout.
using PolicyGrads = PolicyParams;

/// Frozen copy serving as the old policy (and, for GRPO, the reference).
struct PolicySnapshot {
  PolicyParams params;
};

/// Projected visual tokens plus the per-layer cross-attention keys/values.
/// Depends only on (params, visual tokens), so it is computed once per rollout
/// and shared across the autoregressive forward passes.
struct VisualContext {
  Mat raw;     // V x d input vectors
  Mat visemb;  // V x d after vis_proj
  std::vector<Mat> keys;    // per layer, V x d
  std::vector<Mat> values;  // per layer, V x d
};

/// Saved activations of one forward pass, consumed by backward().
struct ForwardTape {
  int prompt_len = 0;
  int total_len = 0;
  std::vector<int> seq;
  Mat emb;
  struct LayerTape {
    Mat x_in, n1, q, k, v;
    std::vector<Mat> attn;  // per head, P x P lower-triangular
    Mat ctx, x_sa;
    Mat n2, cq;
    std::vector<Mat> cattn;  // per head, P x V
    Mat cctx, x_ca;
    Mat n3, pre, act, x_out;
  };
  std::vector<LayerTape> layers;
  Mat nf, logits, probs;
};

PolicyParams init_params(const ModelConfig& cfg, std::uint64_t seed);
PolicyGrads zeros_like(const PolicyParams& params);

VisualContext make_visual_context(const PolicyParams& params, const Mat& visual_tokens);

/// Runs the network over seq (prompt + response tokens). Cross-attention rows
/// are head-averaged per layer and recoverable from the tape.
void forward(const PolicyParams& params, const VisualContext& vis, const std::vector<int>& seq,
             int prompt_len, ForwardTape& tape);

/// Head-averaged cross-attention rows for the response positions, one matrix
/// per layer of shape (response length) x V.
AttentionCapture capture_attention(const ForwardTape& tape, const ModelConfig& cfg);

using StopPredicate = std::function<bool(const std::vector<int>& response_tokens)>;

/// Autoregressive sampling from the snapshot. Records tokens, logprobs, full
/// distributions (at the sampling temperature) and the attention capture.
/// greedy takes the argmax instead of sampling (the temperature->0 limit).
Response sample_rollout(const PolicySnapshot& snapshot, const std::vector<int>& question_tokens,
                        const Mat& visual_tokens, int max_len, double temperature,
                        std::uint64_t seed, const StopPredicate& stop = nullptr,
                        bool greedy = false);

struct TeacherForcedEval {
  std::vector<double> logprobs;
  std::vector<TokenDistribution> distributions;
  ForwardTape tape;
  VisualContext vis;
};

/// Teacher-forced evaluation of a fixed response under the given parameters.
TeacherForcedEval logprobs_under(const PolicyParams& params,
                                 const std::vector<int>& question_tokens,
                                 const Mat& visual_tokens,
                                 const std::vector<int>& response_tokens);

/// Reverse pass: accumulates d(loss)/d(theta) into grads, where
/// dlogprob[j] = d(loss)/d(log prob of response token j). The weights,
/// advantages and old logprobs folded into dlogprob are constants.
void backward(const PolicyParams& params, const VisualContext& vis, const ForwardTape& tape,
              const std::vector<double>& dlogprob, PolicyGrads& grads);

void accumulate(PolicyGrads& into, const PolicyGrads& from);
double grad_norm(const PolicyGrads& grads);
void sgd_step(PolicyParams& params, const PolicyGrads& grads, double lr);

/// Mean token entropy over every generated token in the batch.
double mean_entropy(const std::vector<Response>& responses);

void save_checkpoint(const PolicyParams& params, const std::string& path);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace appo
