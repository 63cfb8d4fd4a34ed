#include "lease/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "lease/io.hpp"

namespace lease::net {

void ModelConfig::validate() const {
  if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0)
    throw std::invalid_argument("embed_dim must be a positive multiple of heads");
  if (enc_layers < 1 || dec_layers < 1) throw std::invalid_argument("layer counts must be >= 1");
  if (mlp_ratio <= 0.0f) throw std::invalid_argument("mlp_ratio must be positive");
  if (seq_len < 2 || seq_len % 2 != 0) throw std::invalid_argument("seq_len must be even and >= 2");
  if (gen_vocab < 2 || gen_vocab > 65534) throw std::invalid_argument("gen_vocab out of range");
  if (contrast_dim < 1) throw std::invalid_argument("contrast_dim must be >= 1");
  if (dropout_p < 0.0f || dropout_p >= 1.0f) throw std::invalid_argument("dropout_p outside [0,1)");
  if (class_count < 0) throw std::invalid_argument("class_count must be >= 0");
  if (class_count > 0 && cond_codebook_k < 1)
    throw std::invalid_argument("conditional model needs a codebook size");
}

// ---------------------------------------------------------------------------
// small kernels
// ---------------------------------------------------------------------------

template <class T>
void matmul_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
  for (int i = 0; i < a.rows; ++i) {
    T* crow = c[i];
    const T* arow = a[i];
    for (int l = 0; l < a.cols; ++l) {
      const T av = arow[l];
      const T* brow = b[l];
      for (int j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void matmul_tA_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
  // c (a.cols x b.cols) += a^T * b
  for (int l = 0; l < a.rows; ++l) {
    const T* arow = a[l];
    const T* brow = b[l];
    for (int i = 0; i < a.cols; ++i) {
      const T av = arow[i];
      T* crow = c[i];
      for (int j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void matmul_tB_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
  // c (a.rows x b.rows) += a * b^T
  for (int i = 0; i < a.rows; ++i) {
    const T* arow = a[i];
    T* crow = c[i];
    for (int j = 0; j < b.rows; ++j) {
      const T* brow = b[j];
      T dot = T(0);
      for (int l = 0; l < a.cols; ++l) dot += arow[l] * brow[l];
      crow[j] += dot;
    }
  }
}

namespace {

constexpr double kLnEps = 1e-5;

template <class T>
void add_row(T* dst, const T* src, int n) {
  for (int i = 0; i < n; ++i) dst[i] += src[i];
}

template <class T>
void add_bias(Mat<T>& m, const Mat<T>& bias) {
  for (int i = 0; i < m.rows; ++i) add_row(m[i], bias[0], m.cols);
}

template <class T>
void bias_grad(const Mat<T>& d, Mat<T>& dbias) {
  for (int i = 0; i < d.rows; ++i) add_row(dbias[0], d[i], d.cols);
}

template <class T>
void layernorm_forward(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, Mat<T>& xhat,
                       std::vector<T>& rstd, Mat<T>& out) {
  const int n = x.rows, d = x.cols;
  xhat = Mat<T>(n, d);
  out = Mat<T>(n, d);
  rstd.resize(n);
  for (int i = 0; i < n; ++i) {
    const T* row = x[i];
    T mean = T(0);
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= T(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) {
      const T c = row[j] - mean;
      var += c * c;
    }
    var /= T(d);
    const T r = T(1) / std::sqrt(var + T(kLnEps));
    rstd[i] = r;
    T* xh = xhat[i];
    T* o = out[i];
    const T* gg = g[0];
    const T* bb = b[0];
    for (int j = 0; j < d; ++j) {
      xh[j] = (row[j] - mean) * r;
      o[j] = xh[j] * gg[j] + bb[j];
    }
  }
}

template <class T>
void layernorm_backward(const Mat<T>& dout, const Mat<T>& xhat, const std::vector<T>& rstd,
                        const Mat<T>& g, Mat<T>& dx, Mat<T>& dg, Mat<T>& db) {
  const int n = dout.rows, d = dout.cols;
  for (int i = 0; i < n; ++i) {
    const T* dy = dout[i];
    const T* xh = xhat[i];
    const T* gg = g[0];
    T* dgr = dg[0];
    T* dbr = db[0];
    T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
    for (int j = 0; j < d; ++j) {
      const T dxh = dy[j] * gg[j];
      sum_dxhat += dxh;
      sum_dxhat_xhat += dxh * xh[j];
      dgr[j] += dy[j] * xh[j];
      dbr[j] += dy[j];
    }
    const T inv_d = T(1) / T(d);
    T* dxr = dx[i];
    for (int j = 0; j < d; ++j) {
      const T dxh = dy[j] * gg[j];
      dxr[j] += rstd[i] * (dxh - sum_dxhat * inv_d - xh[j] * sum_dxhat_xhat * inv_d);
    }
  }
}

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
  const T pdf = T(0.39894228040143267794) * std::exp(T(-0.5) * x * x);
  return cdf + x * pdf;
}

template <class T>
void softmax_row(T* x, int n) {
  T mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  T total = T(0);
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    total += x[i];
  }
  const T inv = T(1) / total;
  for (int i = 0; i < n; ++i) x[i] *= inv;
}

template <class T>
Mat<T> dropout_mask(int rows, int cols, T p, Rng& rng) {
  Mat<T> m(rows, cols);
  const T keep = T(1) / (T(1) - p);
  for (T& x : m.v) x = (rng.uniform() < static_cast<double>(p)) ? T(0) : keep;
  return m;
}

template <class T>
void apply_mask(Mat<T>& x, const Mat<T>& mask) {
  for (size_t i = 0; i < x.v.size(); ++i) x.v[i] *= mask.v[i];
}

// Multi-head self-attention on ln1 output `a`; fills trace fields qkv,
// probs, att.
template <class T>
void attention_forward(const Block<T>& blk, const ModelConfig& cfg, const Mat<T>& a,
                       BlockTrace<T>& t) {
  const int n = a.rows;
  const int d = cfg.embed_dim;
  const int heads = cfg.heads;
  const int hd = d / heads;
  const T scale = T(1) / std::sqrt(T(hd));

  t.qkv = Mat<T>(n, 3 * d);
  add_bias(t.qkv, blk.qkv_b);
  matmul_acc(a, blk.qkv_w, t.qkv);

  t.probs = Mat<T>(heads * n, n);
  t.att = Mat<T>(n, d);
  for (int h = 0; h < heads; ++h) {
    const int qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
    for (int i = 0; i < n; ++i) {
      T* prow = t.probs[h * n + i];
      const T* qi = t.qkv[i] + qo;
      for (int j = 0; j < n; ++j) {
        const T* kj = t.qkv[j] + ko;
        T dot = T(0);
        for (int l = 0; l < hd; ++l) dot += qi[l] * kj[l];
        prow[j] = dot * scale;
      }
      softmax_row(prow, n);
      T* orow = t.att[i] + qo;
      for (int j = 0; j < n; ++j) {
        const T pv = prow[j];
        const T* vj = t.qkv[j] + vo;
        for (int l = 0; l < hd; ++l) orow[l] += pv * vj[l];
      }
    }
  }
}

// datt -> dqkv (returned) for one block.
template <class T>
Mat<T> attention_backward(const Block<T>& blk, const ModelConfig& cfg, const BlockTrace<T>& t,
                          const Mat<T>& datt) {
  const int n = datt.rows;
  const int d = cfg.embed_dim;
  const int heads = cfg.heads;
  const int hd = d / heads;
  const T scale = T(1) / std::sqrt(T(hd));

  Mat<T> dqkv(n, 3 * d);
  std::vector<T> dprow(n);
  for (int h = 0; h < heads; ++h) {
    const int qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
    for (int i = 0; i < n; ++i) {
      const T* doi = datt[i] + qo;
      const T* prow = t.probs[h * n + i];
      // dV and dP
      T dot_pp = T(0);
      for (int j = 0; j < n; ++j) {
        const T* vj = t.qkv[j] + vo;
        T dp = T(0);
        for (int l = 0; l < hd; ++l) dp += doi[l] * vj[l];
        dprow[j] = dp;
        dot_pp += dp * prow[j];
        T* dvj = dqkv[j] + vo;
        const T pv = prow[j];
        for (int l = 0; l < hd; ++l) dvj[l] += pv * doi[l];
      }
      // softmax backward, then scores -> q, k
      const T* qi = t.qkv[i] + qo;
      T* dqi = dqkv[i] + qo;
      for (int j = 0; j < n; ++j) {
        const T ds = prow[j] * (dprow[j] - dot_pp) * scale;
        const T* kj = t.qkv[j] + ko;
        T* dkj = dqkv[j] + ko;
        for (int l = 0; l < hd; ++l) {
          dqi[l] += ds * kj[l];
          dkj[l] += ds * qi[l];
        }
      }
    }
  }
  return dqkv;
}

template <class T>
Mat<T> block_forward(const Block<T>& blk, const ModelConfig& cfg, const Mat<T>& x,
                     Rng* dropout_rng, BlockTrace<T>& t) {
  const int n = x.rows, d = x.cols;
  t.x = x;
  layernorm_forward(x, blk.ln1_g, blk.ln1_b, t.xhat1, t.rstd1, t.ln1);
  attention_forward(blk, cfg, t.ln1, t);

  Mat<T> proj(n, d);
  add_bias(proj, blk.proj_b);
  matmul_acc(t.att, blk.proj_w, proj);
  if (dropout_rng && cfg.dropout_p > 0.0f) {
    t.drop1 = dropout_mask<T>(n, d, T(cfg.dropout_p), *dropout_rng);
    apply_mask(proj, t.drop1);
  }
  t.x2 = x;
  for (size_t i = 0; i < t.x2.v.size(); ++i) t.x2.v[i] += proj.v[i];

  layernorm_forward(t.x2, blk.ln2_g, blk.ln2_b, t.xhat2, t.rstd2, t.ln2);
  const int hidden = cfg.mlp_hidden();
  t.h1 = Mat<T>(n, hidden);
  add_bias(t.h1, blk.fc1_b);
  matmul_acc(t.ln2, blk.fc1_w, t.h1);
  Mat<T> a1(n, hidden);
  for (size_t i = 0; i < a1.v.size(); ++i) a1.v[i] = gelu(t.h1.v[i]);
  Mat<T> h2(n, d);
  add_bias(h2, blk.fc2_b);
  matmul_acc(a1, blk.fc2_w, h2);
  if (dropout_rng && cfg.dropout_p > 0.0f) {
    t.drop2 = dropout_mask<T>(n, d, T(cfg.dropout_p), *dropout_rng);
    apply_mask(h2, t.drop2);
  }
  Mat<T> out = t.x2;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += h2.v[i];
  return out;
}

template <class T>
Mat<T> block_backward(const Block<T>& blk, const ModelConfig& cfg, const BlockTrace<T>& t,
                      const Mat<T>& dout, Block<T>& g) {
  const int n = dout.rows, d = dout.cols;
  const int hidden = cfg.mlp_hidden();

  Mat<T> dh2 = dout;
  if (t.drop2.rows > 0) apply_mask(dh2, t.drop2);
  bias_grad(dh2, g.fc2_b);
  Mat<T> a1(n, hidden);
  for (size_t i = 0; i < a1.v.size(); ++i) a1.v[i] = gelu(t.h1.v[i]);
  matmul_tA_acc(a1, dh2, g.fc2_w);
  Mat<T> dh1(n, hidden);
  matmul_tB_acc(dh2, blk.fc2_w, dh1);
  for (size_t i = 0; i < dh1.v.size(); ++i) dh1.v[i] *= gelu_grad(t.h1.v[i]);
  bias_grad(dh1, g.fc1_b);
  matmul_tA_acc(t.ln2, dh1, g.fc1_w);
  Mat<T> dln2(n, d);
  matmul_tB_acc(dh1, blk.fc1_w, dln2);

  Mat<T> dx2 = dout;  // residual around the MLP
  layernorm_backward(dln2, t.xhat2, t.rstd2, blk.ln2_g, dx2, g.ln2_g, g.ln2_b);

  Mat<T> dproj = dx2;
  if (t.drop1.rows > 0) apply_mask(dproj, t.drop1);
  bias_grad(dproj, g.proj_b);
  matmul_tA_acc(t.att, dproj, g.proj_w);
  Mat<T> datt(n, d);
  matmul_tB_acc(dproj, blk.proj_w, datt);

  Mat<T> dqkv = attention_backward(blk, cfg, t, datt);
  bias_grad(dqkv, g.qkv_b);
  matmul_tA_acc(t.ln1, dqkv, g.qkv_w);
  Mat<T> dln1(n, d);
  matmul_tB_acc(dqkv, blk.qkv_w, dln1);

  Mat<T> dx = dx2;  // residual around attention
  layernorm_backward(dln1, t.xhat1, t.rstd1, blk.ln1_g, dx, g.ln1_g, g.ln1_b);
  return dx;
}

template <class T>
Mat<T> stack_forward(const std::vector<Block<T>>& blocks, const ModelConfig& cfg, const Mat<T>& in,
                     Rng* dropout_rng, StackTrace<T>* trace) {
  Mat<T> x = in;
  StackTrace<T> local;
  StackTrace<T>& t = trace ? *trace : local;
  t.input = in;
  t.blocks.resize(blocks.size());
  for (size_t i = 0; i < blocks.size(); ++i)
    x = block_forward(blocks[i], cfg, x, dropout_rng, t.blocks[i]);
  t.output = x;
  return x;
}

template <class T>
Mat<T> stack_backward(const std::vector<Block<T>>& blocks, const ModelConfig& cfg,
                      const StackTrace<T>& t, const Mat<T>& dout, std::vector<Block<T>>& grads) {
  Mat<T> dx = dout;
  for (size_t i = blocks.size(); i-- > 0;)
    dx = block_backward(blocks[i], cfg, t.blocks[i], dx, grads[i]);
  return dx;
}

}  // namespace

// ---------------------------------------------------------------------------
// public ops
// ---------------------------------------------------------------------------

template <class T>
Mat<T> encode(const Params<T>& p, std::span<const int> tokens, std::span<const int> pos_ids,
              Rng* dropout_rng, StackTrace<T>* trace) {
  const ModelConfig& cfg = p.cfg;
  if (tokens.size() != pos_ids.size() + 1)
    throw std::invalid_argument("encode expects [CLS] + one token per position id");
  const int n = static_cast<int>(tokens.size());
  const int d = cfg.embed_dim;

  Mat<T> in(n, d);
  for (int i = 0; i < n; ++i) {
    const int tok = tokens[i];
    if (tok < 0 || tok >= cfg.vocab_rows())
      throw std::invalid_argument("token id out of range: " + std::to_string(tok));
    const int slot = i == 0 ? 0 : 1 + pos_ids[i - 1];
    if (slot < 0 || slot > cfg.seq_len)
      throw std::invalid_argument("position id out of range");
    const T* te = p.token_embed[tok];
    const T* pe = p.enc_pos[slot];
    T* row = in[i];
    for (int j = 0; j < d; ++j) row[j] = te[j] + pe[j];
  }
  return stack_forward(p.enc, cfg, in, dropout_rng, trace);
}

template <class T>
Mat<T> build_canvas(const Mat<T>& latents, const masking::MaskPlan& plan) {
  const int ss = plan.seq_len();
  const int d = latents.cols;
  if (latents.rows != 1 + static_cast<int>(plan.retained.size()))
    throw std::invalid_argument("latent count does not match the plan");
  Mat<T> canvas(ss, d);
  for (int j = 0; j < ss; ++j) std::memcpy(canvas[j], latents[0], sizeof(T) * d);
  for (size_t r = 0; r < plan.retained.size(); ++r)
    std::memcpy(canvas[plan.retained[r]], latents[1 + static_cast<int>(r)], sizeof(T) * d);
  return canvas;
}

template <class T>
Mat<T> decode(const Params<T>& p, const Mat<T>& canvas, int cond_label, Rng* dropout_rng,
              StackTrace<T>* trace) {
  const ModelConfig& cfg = p.cfg;
  if (canvas.rows != cfg.seq_len || canvas.cols != cfg.embed_dim)
    throw std::invalid_argument("canvas shape mismatch");
  const int d = cfg.embed_dim;
  const int ss = cfg.seq_len;
  int n = ss;
  if (cond_label >= 0) {
    if (!cfg.conditional()) throw std::invalid_argument("model has no class table");
    if (cond_label >= cfg.class_count) throw std::invalid_argument("class id out of range");
    n = ss + 1 + cfg.cond_codebook_k;
  }

  Mat<T> in(n, d);
  for (int j = 0; j < ss; ++j) {
    const T* pe = p.dec_pos[j];
    const T* cv = canvas[j];
    T* row = in[j];
    for (int c = 0; c < d; ++c) row[c] = cv[c] + pe[c];
  }
  if (cond_label >= 0) {
    std::memcpy(in[ss], p.class_embed[cond_label], sizeof(T) * d);
    for (int k = 0; k < cfg.cond_codebook_k; ++k) {
      T* row = in[ss + 1 + k];
      std::memcpy(row, p.centroid_proj_b[0], sizeof(T) * d);
      const T* cen = p.cond_centroids[k];
      for (int c = 0; c < cfg.contrast_dim; ++c) {
        const T cv = cen[c];
        const T* wrow = p.centroid_proj_w[c];
        for (int j = 0; j < d; ++j) row[j] += cv * wrow[j];
      }
    }
  }

  const Mat<T> out = stack_forward(p.dec, cfg, in, dropout_rng, trace);
  Mat<T> logits(ss, cfg.gen_vocab);
  add_bias(logits, p.out_b);
  for (int i = 0; i < ss; ++i) {
    const T* orow = out[i];
    T* lrow = logits[i];
    for (int l = 0; l < d; ++l) {
      const T ov = orow[l];
      const T* wrow = p.out_w[l];
      for (int j = 0; j < cfg.gen_vocab; ++j) lrow[j] += ov * wrow[j];
    }
  }
  return logits;
}

template <class T>
Mat<T> project(const Params<T>& p, const Mat<T>& latents, std::span<const int> rows,
               Mat<T>* z_raw_out) {
  const int d = p.cfg.embed_dim;
  const int cd = p.cfg.contrast_dim;
  Mat<T> raw(static_cast<int>(rows.size()), cd);
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= latents.rows)
      throw std::invalid_argument("projection row out of range");
    const T* lat = latents[rows[r]];
    T* out = raw[static_cast<int>(r)];
    for (int l = 0; l < d; ++l) {
      const T lv = lat[l];
      const T* wrow = p.contrast_w[l];
      for (int j = 0; j < cd; ++j) out[j] += lv * wrow[j];
    }
  }
  Mat<T> z(raw.rows, cd);
  for (int r = 0; r < raw.rows; ++r) {
    T* u = raw[r];
    T n2 = T(0);
    for (int j = 0; j < cd; ++j) n2 += u[j] * u[j];
    if (n2 == T(0)) {
      for (int j = 0; j < cd; ++j) u[j] += T(1e-12);
      n2 = T(cd) * T(1e-24);
    }
    const T inv = T(1) / std::sqrt(n2);
    T* zr = z[r];
    for (int j = 0; j < cd; ++j) zr[j] = u[j] * inv;
  }
  if (z_raw_out) *z_raw_out = raw;
  return z;
}

template <class T>
void forward_sample(const Params<T>& p, std::span<const uint16_t> gen_tokens,
                    const masking::MaskPlan& plan, int cond_label, bool skip_contrast,
                    Rng* dropout_rng, SampleTrace<T>& tr) {
  const ModelConfig& cfg = p.cfg;
  if (plan.seq_len() != cfg.seq_len) throw std::invalid_argument("plan length mismatch");
  tr.plan = plan;
  tr.cond_label = cond_label;
  tr.enc_tokens = masking::apply_plan(gen_tokens, plan, cfg.mask_id(), cfg.cls_id());
  tr.pos_ids = plan.retained;
  tr.latents = encode(p, tr.enc_tokens, tr.pos_ids, dropout_rng, &tr.enc);
  tr.canvas = build_canvas(tr.latents, plan);
  tr.logits = decode(p, tr.canvas, cond_label, dropout_rng, &tr.dec);

  tr.contrast_rows.clear();
  if (!skip_contrast) {
    for (size_t r = 0; r < plan.retained.size(); ++r)
      if (!plan.masked[plan.retained[r]]) tr.contrast_rows.push_back(1 + static_cast<int>(r));
    tr.z = project(p, tr.latents, tr.contrast_rows, &tr.z_raw);
  } else {
    tr.z = Mat<T>();
    tr.z_raw = Mat<T>();
  }
}

template <class T>
void backward_sample(const Params<T>& p, const SampleTrace<T>& tr, const Mat<T>& dlogits,
                     const Mat<T>& dz, bool stop_at_canvas, Params<T>& grads) {
  const ModelConfig& cfg = p.cfg;
  const int d = cfg.embed_dim;
  const int ss = cfg.seq_len;
  const int n_dec = tr.dec.input.rows;

  // logits = dec_out[0..ss) * out_w + out_b
  Mat<T> ddec_out(n_dec, d);
  bias_grad(dlogits, grads.out_b);
  {
    // out_w grad and dec_out grad restricted to the first ss rows
    for (int i = 0; i < ss; ++i) {
      const T* orow = tr.dec.output[i];
      const T* dlrow = dlogits[i];
      T* drow = ddec_out[i];
      for (int l = 0; l < d; ++l) {
        const T* wrow = p.out_w[l];
        T* gwrow = grads.out_w[l];
        const T ov = orow[l];
        T acc = T(0);
        for (int j = 0; j < cfg.gen_vocab; ++j) {
          gwrow[j] += ov * dlrow[j];
          acc += dlrow[j] * wrow[j];
        }
        drow[l] = acc;
      }
    }
  }

  Mat<T> ddec_in = stack_backward(p.dec, cfg, tr.dec, ddec_out, grads.dec);

  // decoder positional table and (conditionally) the tail
  for (int j = 0; j < ss; ++j) add_row(grads.dec_pos[j], ddec_in[j], d);
  if (tr.cond_label >= 0) {
    add_row(grads.class_embed[tr.cond_label], ddec_in[ss], d);
    for (int k = 0; k < cfg.cond_codebook_k; ++k) {
      const T* drow = ddec_in[ss + 1 + k];
      add_row(grads.centroid_proj_b[0], drow, d);
      const T* cen = p.cond_centroids[k];
      for (int c = 0; c < cfg.contrast_dim; ++c) {
        const T cv = cen[c];
        T* gw = grads.centroid_proj_w[c];
        for (int j = 0; j < d; ++j) gw[j] += cv * drow[j];
      }
    }
  }

  if (stop_at_canvas) return;

  // canvas scatter is a bijection from retained entries to positions; the
  // remaining slots all read e_0.
  const int n_enc = tr.latents.rows;
  Mat<T> dlatents(n_enc, d);
  {
    std::vector<int> pos_to_entry(ss, -1);
    for (size_t r = 0; r < tr.plan.retained.size(); ++r)
      pos_to_entry[tr.plan.retained[r]] = static_cast<int>(r);
    for (int j = 0; j < ss; ++j) {
      const int e = pos_to_entry[j];
      add_row(dlatents[e < 0 ? 0 : 1 + e], ddec_in[j], d);
    }
  }

  // contrast head: z = normalize(latent * W)
  if (dz.rows > 0) {
    const int cd = cfg.contrast_dim;
    for (int r = 0; r < dz.rows; ++r) {
      const T* u = tr.z_raw[r];
      const T* zr = tr.z[r];
      const T* dzr = dz[r];
      T n2 = T(0);
      for (int j = 0; j < cd; ++j) n2 += u[j] * u[j];
      const T inv_norm = T(1) / std::sqrt(n2);
      T zdot = T(0);
      for (int j = 0; j < cd; ++j) zdot += zr[j] * dzr[j];
      std::vector<T> du(cd);
      for (int j = 0; j < cd; ++j) du[j] = (dzr[j] - zr[j] * zdot) * inv_norm;

      const int row = tr.contrast_rows[r];
      const T* lat = tr.latents[row];
      T* dlat = dlatents[row];
      for (int l = 0; l < d; ++l) {
        const T* wrow = p.contrast_w[l];
        T* gwrow = grads.contrast_w[l];
        T acc = T(0);
        for (int j = 0; j < cd; ++j) {
          gwrow[j] += lat[l] * du[j];
          acc += du[j] * wrow[j];
        }
        dlat[l] += acc;
      }
    }
  }

  Mat<T> denc_in = stack_backward(p.enc, cfg, tr.enc, dlatents, grads.enc);

  for (int i = 0; i < n_enc; ++i) {
    const int tok = tr.enc_tokens[i];
    const int slot = i == 0 ? 0 : 1 + tr.pos_ids[i - 1];
    add_row(grads.token_embed[tok], denc_in[i], d);
    add_row(grads.enc_pos[slot], denc_in[i], d);
  }
}

// ---------------------------------------------------------------------------
// parameter construction and serialization
// ---------------------------------------------------------------------------

namespace {

template <class T>
void shape_params(Params<T>& p) {
  const ModelConfig& cfg = p.cfg;
  const int d = cfg.embed_dim;
  const int hidden = cfg.mlp_hidden();
  p.token_embed = Mat<T>(cfg.vocab_rows(), d);
  p.enc_pos = Mat<T>(1 + cfg.seq_len, d);
  p.dec_pos = Mat<T>(cfg.seq_len, d);
  auto make_blocks = [&](int count) {
    std::vector<Block<T>> blocks(count);
    for (Block<T>& b : blocks) {
      b.ln1_g = Mat<T>(1, d);
      b.ln1_b = Mat<T>(1, d);
      b.qkv_w = Mat<T>(d, 3 * d);
      b.qkv_b = Mat<T>(1, 3 * d);
      b.proj_w = Mat<T>(d, d);
      b.proj_b = Mat<T>(1, d);
      b.ln2_g = Mat<T>(1, d);
      b.ln2_b = Mat<T>(1, d);
      b.fc1_w = Mat<T>(d, hidden);
      b.fc1_b = Mat<T>(1, hidden);
      b.fc2_w = Mat<T>(hidden, d);
      b.fc2_b = Mat<T>(1, d);
    }
    return blocks;
  };
  p.enc = make_blocks(cfg.enc_layers);
  p.dec = make_blocks(cfg.dec_layers);
  p.out_w = Mat<T>(d, cfg.gen_vocab);
  p.out_b = Mat<T>(1, cfg.gen_vocab);
  p.contrast_w = Mat<T>(d, cfg.contrast_dim);
  if (cfg.conditional()) {
    p.class_embed = Mat<T>(cfg.class_count, d);
    p.centroid_proj_w = Mat<T>(cfg.contrast_dim, d);
    p.centroid_proj_b = Mat<T>(1, d);
    p.cond_centroids = Mat<T>(cfg.cond_codebook_k, cfg.contrast_dim);
  }
}

float trunc_normal02(Rng& rng) {
  double x;
  do {
    x = rng.normal() * 0.02;
  } while (std::abs(x) > 0.04);
  return static_cast<float>(x);
}

}  // namespace

Params<float> init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Params<float> p;
  p.cfg = cfg;
  shape_params(p);
  Rng rng(mix_seed(seed, 0x504152414Dull));  // "PARAM" stream
  visit_params(p, [&](const std::string& name, Matf& m, bool) {
    if (name.find("ln1.g") != std::string::npos || name.find("ln2.g") != std::string::npos) {
      m.fill(1.0f);
    } else if (name.ends_with(".b") || name.find("ln1.b") != std::string::npos ||
               name.find("ln2.b") != std::string::npos) {
      m.fill(0.0f);
    } else if (name == "cond.centroids") {
      m.fill(0.0f);  // caller installs the codebook
    } else {
      for (float& x : m.v) x = trunc_normal02(rng);
    }
  });
  return p;
}

template <class T>
Params<T> zeros_like(const Params<T>& p) {
  Params<T> z = p;
  visit_params(z, [](const std::string&, Mat<T>& m, bool) { m.fill(T(0)); });
  return z;
}

template <class To, class From>
Params<To> cast_params(const Params<From>& p) {
  Params<To> out;
  out.cfg = p.cfg;
  shape_params(out);
  std::vector<const Mat<From>*> src;
  visit_params(p, [&](const std::string&, const Mat<From>& m, bool) { src.push_back(&m); });
  size_t i = 0;
  visit_params(out, [&](const std::string&, Mat<To>& m, bool) {
    const Mat<From>& s = *src[i++];
    for (size_t j = 0; j < m.v.size(); ++j) m.v[j] = static_cast<To>(s.v[j]);
  });
  return out;
}

void save_checkpoint(const Params<float>& p, const std::map<std::string, Matf>& extra,
                     const std::string& path) {
  io::Writer w(path);
  w.magic("LSCK");
  w.u32(1);
  const ModelConfig& c = p.cfg;
  w.u32(static_cast<uint32_t>(c.embed_dim));
  w.u32(static_cast<uint32_t>(c.enc_layers));
  w.u32(static_cast<uint32_t>(c.dec_layers));
  w.u32(static_cast<uint32_t>(c.heads));
  w.f32(c.mlp_ratio);
  w.u32(static_cast<uint32_t>(c.seq_len));
  w.u32(static_cast<uint32_t>(c.gen_vocab));
  w.u32(static_cast<uint32_t>(c.contrast_dim));
  w.f32(c.dropout_p);
  w.u32(static_cast<uint32_t>(c.class_count));
  w.u32(static_cast<uint32_t>(c.cond_codebook_k));

  uint32_t count = 0;
  visit_params(p, [&](const std::string&, const Matf&, bool) { ++count; });
  count += static_cast<uint32_t>(extra.size());
  w.u32(count);

  auto tensor = [&](const std::string& name, const Matf& m) {
    w.u32(static_cast<uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(2);
    w.u32(static_cast<uint32_t>(m.rows));
    w.u32(static_cast<uint32_t>(m.cols));
    w.f32_array(m.data(), m.size());
  };
  visit_params(p, [&](const std::string& name, const Matf& m, bool) { tensor(name, m); });
  for (const auto& [name, m] : extra) tensor(name, m);
  w.close();
}

Checkpoint load_checkpoint(const std::string& path) {
  io::Reader r(path);
  r.magic("LSCK");
  if (r.u32() != 1) throw DataError("unsupported checkpoint version in " + path);
  ModelConfig c;
  c.embed_dim = static_cast<int>(r.u32());
  c.enc_layers = static_cast<int>(r.u32());
  c.dec_layers = static_cast<int>(r.u32());
  c.heads = static_cast<int>(r.u32());
  c.mlp_ratio = r.f32();
  c.seq_len = static_cast<int>(r.u32());
  c.gen_vocab = static_cast<int>(r.u32());
  c.contrast_dim = static_cast<int>(r.u32());
  c.dropout_p = r.f32();
  c.class_count = static_cast<int>(r.u32());
  c.cond_codebook_k = static_cast<int>(r.u32());
  c.validate();

  Checkpoint ck;
  ck.params.cfg = c;
  shape_params(ck.params);

  std::map<std::string, Matf*> slots;
  visit_params(ck.params, [&](const std::string& name, Matf& m, bool) { slots[name] = &m; });
  std::map<std::string, bool> seen;
  for (const auto& [name, m] : slots) seen[name] = false;

  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32();
    if (name_len > 4096) throw DataError("tensor name too long in " + path);
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    const uint32_t rank = r.u32();
    if (rank != 2) throw DataError("unexpected tensor rank in " + path);
    const uint32_t rows = r.u32();
    const uint32_t cols = r.u32();
    Matf m(static_cast<int>(rows), static_cast<int>(cols));
    r.f32_array(m.data(), m.size());
    auto it = slots.find(name);
    if (it != slots.end()) {
      if (!it->second->same_shape(m)) throw DataError("tensor shape mismatch for " + name);
      *it->second = std::move(m);
      seen[name] = true;
    } else {
      ck.extra.emplace(name, std::move(m));
    }
  }
  for (const auto& [name, was_seen] : seen)
    if (!was_seen) throw DataError("checkpoint missing tensor " + name);
  if (!r.at_eof()) throw DataError("trailing bytes in " + path);
  return ck;
}

uint64_t encoder_hash(const Params<float>& p) {
  uint64_t h = 0xCBF29CE484222325ull;
  visit_params(p, [&](const std::string& name, const Matf& m, bool) {
    const bool enc_side = name == "token_embed" || name == "enc_pos" ||
                          name.rfind("enc.", 0) == 0 || name == "contrast.w";
    if (!enc_side) return;
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(m.data(), m.size() * sizeof(float), h);
  });
  return h;
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

template struct Params<float>;
template struct Params<double>;

#define LEASE_INSTANTIATE(T)                                                                     \
  template Mat<T> encode<T>(const Params<T>&, std::span<const int>, std::span<const int>, Rng*, \
                            StackTrace<T>*);                                                     \
  template Mat<T> build_canvas<T>(const Mat<T>&, const masking::MaskPlan&);                      \
  template Mat<T> decode<T>(const Params<T>&, const Mat<T>&, int, Rng*, StackTrace<T>*);         \
  template Mat<T> project<T>(const Params<T>&, const Mat<T>&, std::span<const int>, Mat<T>*);    \
  template void forward_sample<T>(const Params<T>&, std::span<const uint16_t>,                   \
                                  const masking::MaskPlan&, int, bool, Rng*, SampleTrace<T>&);   \
  template void backward_sample<T>(const Params<T>&, const SampleTrace<T>&, const Mat<T>&,       \
                                   const Mat<T>&, bool, Params<T>&);                             \
  template Params<T> zeros_like<T>(const Params<T>&);                                            \
  template void matmul_acc<T>(const Mat<T>&, const Mat<T>&, Mat<T>&);                            \
  template void matmul_tA_acc<T>(const Mat<T>&, const Mat<T>&, Mat<T>&);                         \
  template void matmul_tB_acc<T>(const Mat<T>&, const Mat<T>&, Mat<T>&);

LEASE_INSTANTIATE(float)
LEASE_INSTANTIATE(double)
#undef LEASE_INSTANTIATE

template Params<double> cast_params<double, float>(const Params<float>&);
template Params<float> cast_params<float, double>(const Params<double>&);
template Params<float> cast_params<float, float>(const Params<float>&);

}  // namespace lease::net
