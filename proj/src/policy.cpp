// SPDX-License-Identifier: Apache-2.0
#include "appo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace appo {

namespace {

constexpr double kNormEps = 1e-8;
constexpr double kPi = 3.14159265358979323846;

// y = x * w (overwrite). x: n x k, w: k x m.
void matmul(const Mat& x, const Mat& w, Mat& y) {
  y = Mat(x.rows, w.cols);
  for (int i = 0; i < x.rows; ++i) {
    const double* xr = x.row(i);
    double* yr = y.row(i);
    for (int k = 0; k < x.cols; ++k) {
      const double xv = xr[k];
      const double* wr = w.row(k);
      for (int j = 0; j < w.cols; ++j) yr[j] += xv * wr[j];
    }
  }
}

// gx += gy * w^T. gy: n x m, w: k x m, gx: n x k.
void matmul_nt_acc(const Mat& gy, const Mat& w, Mat& gx) {
  for (int i = 0; i < gy.rows; ++i) {
    const double* gr = gy.row(i);
    double* xr = gx.row(i);
    for (int k = 0; k < w.rows; ++k) {
      const double* wr = w.row(k);
      double acc = 0.0;
      for (int j = 0; j < w.cols; ++j) acc += gr[j] * wr[j];
      xr[k] += acc;
    }
  }
}

// gw += x^T * gy. x: n x k, gy: n x m, gw: k x m.
void matmul_tn_acc(const Mat& x, const Mat& gy, Mat& gw) {
  for (int i = 0; i < x.rows; ++i) {
    const double* xr = x.row(i);
    const double* gr = gy.row(i);
    for (int k = 0; k < x.cols; ++k) {
      const double xv = xr[k];
      if (xv == 0.0) continue;
      double* wr = gw.row(k);
      for (int j = 0; j < gy.cols; ++j) wr[j] += xv * gr[j];
    }
  }
}

void rmsnorm_rows(const Mat& x, Mat& y) {
  y = Mat(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    const double* xr = x.row(i);
    double m = 0.0;
    for (int j = 0; j < x.cols; ++j) m += xr[j] * xr[j];
    const double inv = 1.0 / std::sqrt(m / x.cols + kNormEps);
    double* yr = y.row(i);
    for (int j = 0; j < x.cols; ++j) yr[j] = xr[j] * inv;
  }
}

// gx += d(rmsnorm)/dx applied to gy.
void rmsnorm_backward_acc(const Mat& gy, const Mat& x, Mat& gx) {
  const int d = x.cols;
  for (int i = 0; i < x.rows; ++i) {
    const double* xr = x.row(i);
    const double* gr = gy.row(i);
    double m = 0.0, dot = 0.0;
    for (int j = 0; j < d; ++j) {
      m += xr[j] * xr[j];
      dot += gr[j] * xr[j];
    }
    const double r2 = m / d + kNormEps;
    const double r = std::sqrt(r2);
    const double scale = dot / (d * r2 * r);
    double* out = gx.row(i);
    for (int j = 0; j < d; ++j) out[j] += gr[j] / r - xr[j] * scale;
  }
}

void softmax_row(const double* in, double* out, int n) {
  double mx = in[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, in[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - mx);
    sum += out[i];
  }
  const double inv = 1.0 / sum;
  for (int i = 0; i < n; ++i) out[i] *= inv;
}

// gs = p .* (gp - dot(gp, p)), written over gp.
void softmax_backward_row(const double* p, double* gp, int n) {
  double dot = 0.0;
  for (int i = 0; i < n; ++i) dot += gp[i] * p[i];
  for (int i = 0; i < n; ++i) gp[i] = p[i] * (gp[i] - dot);
}

PolicyParams shaped_params(const ModelConfig& cfg) {
  PolicyParams p;
  p.cfg = cfg;
  const int d = cfg.embed_dim;
  p.tok_emb = Mat(cfg.vocab_size, d);
  p.vis_proj = Mat(d, d);
  p.layers.resize(cfg.num_layers);
  for (LayerParams& l : p.layers) {
    l.wq = Mat(d, d);
    l.wk = Mat(d, d);
    l.wv = Mat(d, d);
    l.wo = Mat(d, d);
    l.cq = Mat(d, d);
    l.ck = Mat(d, d);
    l.cv = Mat(d, d);
    l.co = Mat(d, d);
    l.w1 = Mat(d, cfg.ffn_dim());
    l.w2 = Mat(cfg.ffn_dim(), d);
  }
  p.out_proj = Mat(d, cfg.vocab_size);
  return p;
}

void add_positional(Mat& emb) {
  const int d = emb.cols;
  for (int p = 0; p < emb.rows; ++p) {
    double* row = emb.row(p);
    for (int j = 0; j < d; j += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(j) / d);
      row[j] += std::sin(p * freq);
      if (j + 1 < d) row[j + 1] += std::cos(p * freq);
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (embed_dim < 1 || num_heads < 1 || embed_dim % num_heads != 0)
    throw ConfigError("embed_dim must be a positive multiple of num_heads");
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (max_response_len < 1) throw ConfigError("max_response_len must be >= 1");
}

PolicyParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  PolicyParams p = shaped_params(cfg);
  Prng rng(mix_seed(seed, 0x70617261));
  p.for_each_tensor([&](const std::string& name, Mat& m) {
    // 1/sqrt(fan-in); the cross-attention queries and the readout start with a
    // small gain so the initial attention and token distribution are near
    // uniform.
    double scale = 1.0 / std::sqrt(static_cast<double>(m.rows));
    if (name.ends_with(".cq") || name == "out_proj") scale *= 0.02;
    for (double& v : m.data) v = rng.normal() * scale;
  });
  return p;
}

PolicyGrads zeros_like(const PolicyParams& params) {
  return shaped_params(params.cfg);
}

VisualContext make_visual_context(const PolicyParams& params, const Mat& visual_tokens) {
  if (visual_tokens.cols != params.cfg.embed_dim)
    throw ShapeError("visual token width does not match embed_dim");
  VisualContext vis;
  vis.raw = visual_tokens;
  matmul(vis.raw, params.vis_proj, vis.visemb);
  vis.keys.resize(params.layers.size());
  vis.values.resize(params.layers.size());
  for (size_t l = 0; l < params.layers.size(); ++l) {
    matmul(vis.visemb, params.layers[l].ck, vis.keys[l]);
    matmul(vis.visemb, params.layers[l].cv, vis.values[l]);
  }
  return vis;
}

void forward(const PolicyParams& params, const VisualContext& vis, const std::vector<int>& seq,
             int prompt_len, ForwardTape& tape) {
  const ModelConfig& cfg = params.cfg;
  const int p_total = static_cast<int>(seq.size());
  const int d = cfg.embed_dim;
  const int heads = cfg.num_heads;
  const int dh = cfg.head_dim();
  const int v_count = vis.raw.rows;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  if (prompt_len < 1 || prompt_len > p_total) throw ShapeError("invalid prompt length");
  if (p_total - prompt_len > cfg.max_response_len)
    throw ShapeError("response prefix exceeds max_response_len");
  for (int t : seq)
    if (t < 0 || t >= cfg.vocab_size) throw ShapeError("token id outside vocabulary");

  tape.prompt_len = prompt_len;
  tape.total_len = p_total;
  tape.seq = seq;

  tape.emb = Mat(p_total, d);
  for (int p = 0; p < p_total; ++p) {
    const double* e = params.tok_emb.row(seq[p]);
    double* row = tape.emb.row(p);
    for (int j = 0; j < d; ++j) row[j] = e[j];
  }
  add_positional(tape.emb);

  tape.layers.assign(cfg.num_layers, {});
  Mat x = tape.emb;

  for (int l = 0; l < cfg.num_layers; ++l) {
    ForwardTape::LayerTape& lt = tape.layers[l];
    const LayerParams& lp = params.layers[l];
    lt.x_in = x;

    // self-attention
    rmsnorm_rows(lt.x_in, lt.n1);
    matmul(lt.n1, lp.wq, lt.q);
    matmul(lt.n1, lp.wk, lt.k);
    matmul(lt.n1, lp.wv, lt.v);
    lt.attn.assign(heads, Mat(p_total, p_total));
    lt.ctx = Mat(p_total, d);
    std::vector<double> scores(p_total);
    for (int h = 0; h < heads; ++h) {
      const int off = h * dh;
      Mat& attn = lt.attn[h];
      for (int p = 0; p < p_total; ++p) {
        const double* qr = lt.q.row(p) + off;
        for (int t = 0; t <= p; ++t) {
          const double* kr = lt.k.row(t) + off;
          double s = 0.0;
          for (int j = 0; j < dh; ++j) s += qr[j] * kr[j];
          scores[t] = s * inv_sqrt_dh;
        }
        double* ar = attn.row(p);
        softmax_row(scores.data(), ar, p + 1);
        double* cr = lt.ctx.row(p) + off;
        for (int t = 0; t <= p; ++t) {
          const double* vr = lt.v.row(t) + off;
          for (int j = 0; j < dh; ++j) cr[j] += ar[t] * vr[j];
        }
      }
    }
    Mat sa;
    matmul(lt.ctx, lp.wo, sa);
    lt.x_sa = lt.x_in;
    for (size_t i = 0; i < sa.data.size(); ++i) lt.x_sa.data[i] += sa.data[i];

    // cross-attention onto the visual tokens
    rmsnorm_rows(lt.x_sa, lt.n2);
    matmul(lt.n2, lp.cq, lt.cq);
    lt.cattn.assign(heads, Mat(p_total, v_count));
    lt.cctx = Mat(p_total, d);
    const Mat& kv = vis.keys[l];
    const Mat& vv = vis.values[l];
    for (int h = 0; h < heads; ++h) {
      const int off = h * dh;
      Mat& cattn = lt.cattn[h];
      std::vector<double> scores(v_count);
      for (int p = 0; p < p_total; ++p) {
        const double* qr = lt.cq.row(p) + off;
        for (int u = 0; u < v_count; ++u) {
          const double* kr = kv.row(u) + off;
          double s = 0.0;
          for (int j = 0; j < dh; ++j) s += qr[j] * kr[j];
          scores[u] = s * inv_sqrt_dh;
        }
        double* ar = cattn.row(p);
        softmax_row(scores.data(), ar, v_count);
        double* cr = lt.cctx.row(p) + off;
        for (int u = 0; u < v_count; ++u) {
          const double* vr = vv.row(u) + off;
          for (int j = 0; j < dh; ++j) cr[j] += ar[u] * vr[j];
        }
      }
    }
    Mat ca;
    matmul(lt.cctx, lp.co, ca);
    lt.x_ca = lt.x_sa;
    for (size_t i = 0; i < ca.data.size(); ++i) lt.x_ca.data[i] += ca.data[i];

    // feed-forward
    rmsnorm_rows(lt.x_ca, lt.n3);
    matmul(lt.n3, lp.w1, lt.pre);
    lt.act = lt.pre;
    for (double& a : lt.act.data) a = std::tanh(a);
    Mat fo;
    matmul(lt.act, lp.w2, fo);
    lt.x_out = lt.x_ca;
    for (size_t i = 0; i < fo.data.size(); ++i) lt.x_out.data[i] += fo.data[i];

    x = lt.x_out;
  }

  rmsnorm_rows(x, tape.nf);
  matmul(tape.nf, params.out_proj, tape.logits);
  tape.probs = Mat(p_total, cfg.vocab_size);
  for (int p = 0; p < p_total; ++p)
    softmax_row(tape.logits.row(p), tape.probs.row(p), cfg.vocab_size);
}

AttentionCapture capture_attention(const ForwardTape& tape, const ModelConfig& cfg) {
  AttentionCapture cap;
  const int len = tape.total_len - tape.prompt_len;
  const int v_count = tape.layers.empty() ? 0 : tape.layers[0].cattn[0].cols;
  cap.layers.reserve(tape.layers.size());
  for (const ForwardTape::LayerTape& lt : tape.layers) {
    Mat m(len, v_count);
    for (int j = 0; j < len; ++j) {
      double* row = m.row(j);
      for (int h = 0; h < cfg.num_heads; ++h) {
        const double* ar = lt.cattn[h].row(tape.prompt_len + j);
        for (int u = 0; u < v_count; ++u) row[u] += ar[u];
      }
      for (int u = 0; u < v_count; ++u) row[u] /= cfg.num_heads;
    }
    cap.layers.push_back(std::move(m));
  }
  return cap;
}

Response sample_rollout(const PolicySnapshot& snapshot, const std::vector<int>& question_tokens,
                        const Mat& visual_tokens, int max_len, double temperature,
                        std::uint64_t seed, const StopPredicate& stop, bool greedy) {
  const PolicyParams& params = snapshot.params;
  const ModelConfig& cfg = params.cfg;
  if (temperature <= 0.0) throw ConfigError("temperature must be > 0");
  if (question_tokens.empty()) throw ConfigError("question must contain at least one token");
  if (max_len < 1 || max_len > cfg.max_response_len)
    throw ConfigError("max_len must be in [1, max_response_len]");

  Prng rng(mix_seed(seed, 0x726f6c6c));
  VisualContext vis = make_visual_context(params, visual_tokens);

  std::vector<int> seq = question_tokens;
  const int prompt = static_cast<int>(seq.size());
  Response resp;
  ForwardTape tape;
  std::vector<double> dist(cfg.vocab_size);

  for (int step = 0; step < max_len; ++step) {
    forward(params, vis, seq, prompt, tape);
    const double* logits = tape.logits.row(tape.total_len - 1);
    if (temperature == 1.0) {
      softmax_row(logits, dist.data(), cfg.vocab_size);
    } else {
      std::vector<double> scaled(cfg.vocab_size);
      for (int v = 0; v < cfg.vocab_size; ++v) scaled[v] = logits[v] / temperature;
      softmax_row(scaled.data(), dist.data(), cfg.vocab_size);
    }

    int tok = 0;
    if (greedy) {
      for (int v = 1; v < cfg.vocab_size; ++v)
        if (dist[v] > dist[tok]) tok = v;
    } else {
      const double u = rng.uniform();
      double acc = 0.0;
      tok = cfg.vocab_size - 1;
      for (int v = 0; v < cfg.vocab_size; ++v) {
        acc += dist[v];
        if (u < acc) {
          tok = v;
          break;
        }
      }
    }

    resp.tokens.push_back(tok);
    resp.old_logprobs.push_back(std::log(dist[tok]));
    TokenDistribution td;
    td.probs = dist;
    resp.distributions.push_back(std::move(td));
    seq.push_back(tok);
    if (stop && stop(resp.tokens)) break;
  }

  forward(params, vis, seq, prompt, tape);
  resp.attention = capture_attention(tape, cfg);
  return resp;
}

TeacherForcedEval logprobs_under(const PolicyParams& params,
                                 const std::vector<int>& question_tokens,
                                 const Mat& visual_tokens,
                                 const std::vector<int>& response_tokens) {
  TeacherForcedEval eval;
  std::vector<int> seq = question_tokens;
  seq.insert(seq.end(), response_tokens.begin(), response_tokens.end());
  const int prompt = static_cast<int>(question_tokens.size());
  eval.vis = make_visual_context(params, visual_tokens);
  forward(params, eval.vis, seq, prompt, eval.tape);
  const int len = static_cast<int>(response_tokens.size());
  eval.logprobs.resize(len);
  eval.distributions.resize(len);
  for (int j = 0; j < len; ++j) {
    const double* probs = eval.tape.probs.row(prompt - 1 + j);
    eval.distributions[j].probs.assign(probs, probs + params.cfg.vocab_size);
    eval.logprobs[j] = std::log(probs[response_tokens[j]]);
  }
  return eval;
}

void backward(const PolicyParams& params, const VisualContext& vis, const ForwardTape& tape,
              const std::vector<double>& dlogprob, PolicyGrads& grads) {
  const ModelConfig& cfg = params.cfg;
  const int p_total = tape.total_len;
  const int prompt = tape.prompt_len;
  const int len = p_total - prompt;
  const int d = cfg.embed_dim;
  const int heads = cfg.num_heads;
  const int dh = cfg.head_dim();
  const int v_count = vis.raw.rows;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  if (static_cast<int>(dlogprob.size()) != len)
    throw ShapeError("dlogprob length does not match response length");

  // d(loss)/d(logits): position prompt-1+j predicts response token j.
  Mat glogits(p_total, cfg.vocab_size);
  for (int j = 0; j < len; ++j) {
    const double g = dlogprob[j];
    if (g == 0.0) continue;
    const int p = prompt - 1 + j;
    const int tok = tape.seq[prompt + j];
    const double* probs = tape.probs.row(p);
    double* row = glogits.row(p);
    for (int v = 0; v < cfg.vocab_size; ++v) row[v] = -g * probs[v];
    row[tok] += g;
  }

  matmul_tn_acc(tape.nf, glogits, grads.out_proj);
  Mat gnf(p_total, d);
  matmul_nt_acc(glogits, params.out_proj, gnf);

  const Mat& x_final = tape.layers.back().x_out;
  Mat gx(p_total, d);
  rmsnorm_backward_acc(gnf, x_final, gx);

  Mat gvisemb(v_count, d);

  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const ForwardTape::LayerTape& lt = tape.layers[l];
    const LayerParams& lp = params.layers[l];
    LayerParams& gl = grads.layers[l];

    // feed-forward block: x_out = x_ca + tanh(n3 w1) w2
    Mat gfo = gx;  // residual: gx also flows to x_ca below
    Mat gact(p_total, cfg.ffn_dim());
    matmul_nt_acc(gfo, lp.w2, gact);
    matmul_tn_acc(lt.act, gfo, gl.w2);
    Mat gpre = gact;
    for (size_t i = 0; i < gpre.data.size(); ++i)
      gpre.data[i] *= 1.0 - lt.act.data[i] * lt.act.data[i];
    Mat gn3(p_total, d);
    matmul_nt_acc(gpre, lp.w1, gn3);
    matmul_tn_acc(lt.n3, gpre, gl.w1);
    Mat gx_ca = gx;
    rmsnorm_backward_acc(gn3, lt.x_ca, gx_ca);

    // cross-attention block: x_ca = x_sa + cross(n2) co
    Mat gca = gx_ca;
    Mat gcctx(p_total, d);
    matmul_nt_acc(gca, lp.co, gcctx);
    matmul_tn_acc(lt.cctx, gca, gl.co);

    Mat gcq(p_total, d);
    Mat gkv(v_count, d);
    Mat gvv(v_count, d);
    const Mat& kv = vis.keys[l];
    const Mat& vv = vis.values[l];
    std::vector<double> ga(v_count);
    for (int h = 0; h < heads; ++h) {
      const int off = h * dh;
      const Mat& cattn = lt.cattn[h];
      for (int p = 0; p < p_total; ++p) {
        const double* ar = cattn.row(p);
        const double* gc = gcctx.row(p) + off;
        for (int u = 0; u < v_count; ++u) {
          const double* vr = vv.row(u) + off;
          double dot = 0.0;
          for (int j = 0; j < dh; ++j) dot += gc[j] * vr[j];
          ga[u] = dot;
          double* gvr = gvv.row(u) + off;
          for (int j = 0; j < dh; ++j) gvr[j] += ar[u] * gc[j];
        }
        softmax_backward_row(ar, ga.data(), v_count);
        double* gqr = gcq.row(p) + off;
        const double* qr = lt.cq.row(p) + off;
        for (int u = 0; u < v_count; ++u) {
          const double gs = ga[u] * inv_sqrt_dh;
          if (gs == 0.0) continue;
          const double* kr = kv.row(u) + off;
          double* gkr = gkv.row(u) + off;
          for (int j = 0; j < dh; ++j) {
            gqr[j] += gs * kr[j];
            gkr[j] += gs * qr[j];
          }
        }
      }
    }
    Mat gn2(p_total, d);
    matmul_nt_acc(gcq, lp.cq, gn2);
    matmul_tn_acc(lt.n2, gcq, gl.cq);
    matmul_tn_acc(vis.visemb, gkv, gl.ck);
    matmul_tn_acc(vis.visemb, gvv, gl.cv);
    matmul_nt_acc(gkv, lp.ck, gvisemb);
    matmul_nt_acc(gvv, lp.cv, gvisemb);
    Mat gx_sa = gx_ca;
    rmsnorm_backward_acc(gn2, lt.x_sa, gx_sa);

    // self-attention block: x_sa = x_in + self(n1) wo
    Mat gsa = gx_sa;
    Mat gctx(p_total, d);
    matmul_nt_acc(gsa, lp.wo, gctx);
    matmul_tn_acc(lt.ctx, gsa, gl.wo);

    Mat gq(p_total, d), gk(p_total, d), gv(p_total, d);
    std::vector<double> gas(p_total);
    for (int h = 0; h < heads; ++h) {
      const int off = h * dh;
      const Mat& attn = lt.attn[h];
      for (int p = 0; p < p_total; ++p) {
        const double* ar = attn.row(p);
        const double* gc = gctx.row(p) + off;
        for (int t = 0; t <= p; ++t) {
          const double* vr = lt.v.row(t) + off;
          double dot = 0.0;
          for (int j = 0; j < dh; ++j) dot += gc[j] * vr[j];
          gas[t] = dot;
          double* gvr = gv.row(t) + off;
          for (int j = 0; j < dh; ++j) gvr[j] += ar[t] * gc[j];
        }
        softmax_backward_row(ar, gas.data(), p + 1);
        double* gqr = gq.row(p) + off;
        const double* qr = lt.q.row(p) + off;
        for (int t = 0; t <= p; ++t) {
          const double gs = gas[t] * inv_sqrt_dh;
          if (gs == 0.0) continue;
          const double* kr = lt.k.row(t) + off;
          double* gkr = gk.row(t) + off;
          for (int j = 0; j < dh; ++j) {
            gqr[j] += gs * kr[j];
            gkr[j] += gs * qr[j];
          }
        }
      }
    }
    Mat gn1(p_total, d);
    matmul_nt_acc(gq, lp.wq, gn1);
    matmul_nt_acc(gk, lp.wk, gn1);
    matmul_nt_acc(gv, lp.wv, gn1);
    matmul_tn_acc(lt.n1, gq, gl.wq);
    matmul_tn_acc(lt.n1, gk, gl.wk);
    matmul_tn_acc(lt.n1, gv, gl.wv);

    Mat gx_in = gx_sa;
    rmsnorm_backward_acc(gn1, lt.x_in, gx_in);
    gx = std::move(gx_in);
  }

  // embeddings (positional encoding is constant)
  for (int p = 0; p < p_total; ++p) {
    const double* gr = gx.row(p);
    double* er = grads.tok_emb.row(tape.seq[p]);
    for (int j = 0; j < d; ++j) er[j] += gr[j];
  }

  // visual projection
  matmul_tn_acc(vis.raw, gvisemb, grads.vis_proj);
}

namespace {

/// Pairs up tensors of two identically shaped parameter sets in the canonical
/// order.
template <typename F>
void zip_tensors(PolicyParams& a, const PolicyParams& b, F&& f) {
  std::vector<Mat*> lhs;
  std::vector<const Mat*> rhs;
  a.for_each_tensor([&](const std::string&, Mat& m) { lhs.push_back(&m); });
  b.for_each_tensor([&](const std::string&, const Mat& m) { rhs.push_back(&m); });
  for (size_t i = 0; i < lhs.size(); ++i) f(*lhs[i], *rhs[i]);
}

}  // namespace

void accumulate(PolicyGrads& into, const PolicyGrads& from) {
  zip_tensors(into, from, [](Mat& m, const Mat& src) {
    for (size_t i = 0; i < m.data.size(); ++i) m.data[i] += src.data[i];
  });
}

double grad_norm(const PolicyGrads& grads) {
  double acc = 0.0;
  grads.for_each_tensor([&](const std::string&, const Mat& m) {
    for (double v : m.data) acc += v * v;
  });
  return std::sqrt(acc);
}

void sgd_step(PolicyParams& params, const PolicyGrads& grads, double lr) {
  if (lr <= 0.0) throw ConfigError("learning rate must be > 0");
  zip_tensors(params, grads, [lr](Mat& m, const Mat& src) {
    for (size_t i = 0; i < m.data.size(); ++i) m.data[i] -= lr * src.data[i];
  });
}

double mean_entropy(const std::vector<Response>& responses) {
  double acc = 0.0;
  long count = 0;
  for (const Response& r : responses) {
    for (const TokenDistribution& d : r.distributions) {
      acc += token_entropy(d);
      ++count;
    }
  }
  return count > 0 ? acc / count : 0.0;
}

void save_checkpoint(const PolicyParams& params, const std::string& path) {
  nlohmann::ordered_json j;
  j["version"] = "appo-checkpoint/1";
  nlohmann::ordered_json model;
  model["vocab_size"] = params.cfg.vocab_size;
  model["embed_dim"] = params.cfg.embed_dim;
  model["num_heads"] = params.cfg.num_heads;
  model["num_layers"] = params.cfg.num_layers;
  model["max_response_len"] = params.cfg.max_response_len;
  j["model"] = std::move(model);
  nlohmann::ordered_json tensors;
  params.for_each_tensor([&](const std::string& name, const Mat& m) {
    nlohmann::ordered_json t;
    t["rows"] = m.rows;
    t["cols"] = m.cols;
    t["data"] = m.data;
    tensors[name] = std::move(t);
  });
  j["tensors"] = std::move(tensors);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out << j.dump() << '\n';
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

PolicyParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(in, nullptr, false);
  if (j.is_discarded()) throw IoError("checkpoint parse error: " + path);
  if (!j.contains("version") || j.at("version").get<std::string>() != "appo-checkpoint/1")
    throw IoError("unsupported checkpoint version in " + path);
  ModelConfig cfg;
  const auto& model = j.at("model");
  cfg.vocab_size = model.at("vocab_size").get<int>();
  cfg.embed_dim = model.at("embed_dim").get<int>();
  cfg.num_heads = model.at("num_heads").get<int>();
  cfg.num_layers = model.at("num_layers").get<int>();
  cfg.max_response_len = model.at("max_response_len").get<int>();
  PolicyParams p = shaped_params(cfg);
  const auto& tensors = j.at("tensors");
  p.for_each_tensor([&](const std::string& name, Mat& m) {
    const auto& t = tensors.at(name);
    if (t.at("rows").get<int>() != m.rows || t.at("cols").get<int>() != m.cols)
      throw IoError("checkpoint tensor shape mismatch for " + name);
    m.data = t.at("data").get<std::vector<double>>();
  });
  return p;
}

}  // namespace appo
