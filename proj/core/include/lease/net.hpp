#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lease/common.hpp"
#include "lease/masking.hpp"

namespace lease::net {

struct ModelConfig {
  int embed_dim = 64;
  int enc_layers = 4;
  int dec_layers = 2;
  int heads = 4;
  float mlp_ratio = 4.0f;
  int seq_len = 16;      // SS
  int gen_vocab = 64;    // v_max
  int contrast_dim = 16; // D, matches the codebook
  float dropout_p = 0.0f;
  int class_count = 0;   // > 0 marks a conditional decoder
  int cond_codebook_k = 0;

  int mask_id() const { return gen_vocab; }
  int cls_id() const { return gen_vocab + 1; }
  int vocab_rows() const { return gen_vocab + 2; }
  int mlp_hidden() const { return static_cast<int>(embed_dim * mlp_ratio); }
  bool conditional() const { return class_count > 0; }
  void validate() const;
};

/// One pre-norm transformer block: LN -> multi-head self-attention ->
/// residual, LN -> GELU MLP -> residual.
template <class T>
struct Block {
  Mat<T> ln1_g, ln1_b;   // 1 x d
  Mat<T> qkv_w;          // d x 3d
  Mat<T> qkv_b;          // 1 x 3d
  Mat<T> proj_w;         // d x d
  Mat<T> proj_b;         // 1 x d
  Mat<T> ln2_g, ln2_b;   // 1 x d
  Mat<T> fc1_w;          // d x hidden
  Mat<T> fc1_b;          // 1 x hidden
  Mat<T> fc2_w;          // hidden x d
  Mat<T> fc2_b;          // 1 x d
};

template <class T>
struct Params {
  ModelConfig cfg;
  Mat<T> token_embed;  // (v_max + 2) x d, rows v_max = [MASK], v_max+1 = [CLS]
  Mat<T> enc_pos;      // (1 + SS) x d, row 0 is the [CLS] slot
  Mat<T> dec_pos;      // SS x d
  std::vector<Block<T>> enc;
  std::vector<Block<T>> dec;
  Mat<T> out_w;        // d x v_max
  Mat<T> out_b;        // 1 x v_max
  Mat<T> contrast_w;   // d x D, bias-free so unit-norm scale invariance is exact
  // Conditional decoder extras; empty when class_count == 0.
  Mat<T> class_embed;      // class_count x d
  Mat<T> centroid_proj_w;  // D x d
  Mat<T> centroid_proj_b;  // 1 x d
  Mat<T> cond_centroids;   // K x D, frozen copy of the codebook
};

Params<float> init_params(const ModelConfig& cfg, uint64_t seed);

template <class T>
Params<T> zeros_like(const Params<T>& p);

template <class To, class From>
Params<To> cast_params(const Params<From>& p);

/// Visits every tensor in a fixed order; f(name, mat, trainable).
/// The order is the serialization and optimizer-state order.
template <class T, class F>
void visit_params(Params<T>& p, F&& f) {
  auto block = [&](std::vector<Block<T>>& blocks, const std::string& prefix) {
    for (size_t i = 0; i < blocks.size(); ++i) {
      Block<T>& b = blocks[i];
      const std::string s = prefix + std::to_string(i) + ".";
      f(s + "ln1.g", b.ln1_g, true);
      f(s + "ln1.b", b.ln1_b, true);
      f(s + "qkv.w", b.qkv_w, true);
      f(s + "qkv.b", b.qkv_b, true);
      f(s + "proj.w", b.proj_w, true);
      f(s + "proj.b", b.proj_b, true);
      f(s + "ln2.g", b.ln2_g, true);
      f(s + "ln2.b", b.ln2_b, true);
      f(s + "fc1.w", b.fc1_w, true);
      f(s + "fc1.b", b.fc1_b, true);
      f(s + "fc2.w", b.fc2_w, true);
      f(s + "fc2.b", b.fc2_b, true);
    }
  };
  f("token_embed", p.token_embed, true);
  f("enc_pos", p.enc_pos, true);
  f("dec_pos", p.dec_pos, true);
  block(p.enc, "enc.");
  block(p.dec, "dec.");
  f("out.w", p.out_w, true);
  f("out.b", p.out_b, true);
  f("contrast.w", p.contrast_w, true);
  if (p.cfg.conditional()) {
    f("cond.class_embed", p.class_embed, true);
    f("cond.centroid_proj.w", p.centroid_proj_w, true);
    f("cond.centroid_proj.b", p.centroid_proj_b, true);
    f("cond.centroids", p.cond_centroids, false);
  }
}

template <class T, class F>
void visit_params(const Params<T>& p, F&& f) {
  visit_params(const_cast<Params<T>&>(p),
               [&](const std::string& n, Mat<T>& m, bool t) { f(n, const_cast<const Mat<T>&>(m), t); });
}

/// Activations recorded by one block forward, enough to replay the exact
/// reverse pass.
template <class T>
struct BlockTrace {
  Mat<T> x;               // block input
  Mat<T> xhat1;           // LN1 normalized, pre-affine
  std::vector<T> rstd1;
  Mat<T> ln1;             // LN1 output
  Mat<T> qkv;             // n x 3d
  Mat<T> probs;           // (heads*n) x n attention rows
  Mat<T> att;             // n x d head-concat, pre projection
  Mat<T> drop1;           // dropout multipliers, empty when inactive
  Mat<T> x2;              // after attention residual
  Mat<T> xhat2;
  std::vector<T> rstd2;
  Mat<T> ln2;
  Mat<T> h1;              // MLP preactivation
  Mat<T> drop2;
};

template <class T>
struct StackTrace {
  Mat<T> input;
  std::vector<BlockTrace<T>> blocks;
  Mat<T> output;
};

/// Encoder forward. tokens[0] must be [CLS]; pos_ids are the original patch
/// positions of tokens[1..] (strictly increasing). Positional rows are
/// looked up by original position so retained subsequences keep their
/// spatial identity. Pass dropout_rng = nullptr to disable dropout.
template <class T>
Mat<T> encode(const Params<T>& p, std::span<const int> tokens, std::span<const int> pos_ids,
              Rng* dropout_rng, StackTrace<T>* trace);

/// Scatters retained latents to their original positions and fills every
/// dropped slot with the [CLS] latent e_0.
template <class T>
Mat<T> build_canvas(const Mat<T>& latents, const masking::MaskPlan& plan);

/// Decoder forward over the SS-slot canvas (plus class token and projected
/// centroid tail when cond_label >= 0). Returns SS x v_max logits.
template <class T>
Mat<T> decode(const Params<T>& p, const Mat<T>& canvas, int cond_label,
              Rng* dropout_rng, StackTrace<T>* trace);

/// Bias-free linear map to the contrast space followed by L2 normalization.
/// `rows` selects latent rows (the unmasked retained ones; row 0 = [CLS] is
/// never included by callers). Zero-norm vectors are nudged by 1e-12.
template <class T>
Mat<T> project(const Params<T>& p, const Mat<T>& latents, std::span<const int> rows,
               Mat<T>* z_raw_out = nullptr);

/// Everything one training sample recorded on its way forward.
template <class T>
struct SampleTrace {
  std::vector<int> enc_tokens;
  std::vector<int> pos_ids;
  masking::MaskPlan plan;
  int cond_label = -1;
  StackTrace<T> enc;
  Mat<T> latents;          // (1+L) x d
  Mat<T> canvas;           // SS x d
  StackTrace<T> dec;
  Mat<T> logits;           // SS x v_max
  std::vector<int> contrast_rows;  // latent row index per z row
  Mat<T> z_raw;            // N_u x D
  Mat<T> z;                // N_u x D, unit rows
};

/// Runs encode -> canvas -> decode (and project unless skip_contrast).
template <class T>
void forward_sample(const Params<T>& p, std::span<const uint16_t> gen_tokens,
                    const masking::MaskPlan& plan, int cond_label, bool skip_contrast,
                    Rng* dropout_rng, SampleTrace<T>& tr);

/// Exact reverse pass for one sample. dlogits is SS x v_max; dz is N_u x D
/// (pass an empty Mat to skip the contrast path). stop_at_canvas cuts the
/// graph at the canvas so nothing flows into the encoder (decoder-only
/// fine-tuning); gradients accumulate into `grads`.
template <class T>
void backward_sample(const Params<T>& p, const SampleTrace<T>& tr, const Mat<T>& dlogits,
                     const Mat<T>& dz, bool stop_at_canvas, Params<T>& grads);

/// Checkpoint container ("LSCK"): serialized ModelConfig then named f32
/// tensors. Extra tensors (optimizer state, counters) ride along by name.
void save_checkpoint(const Params<float>& p, const std::map<std::string, Matf>& extra,
                     const std::string& path);

struct Checkpoint {
  Params<float> params;
  std::map<std::string, Matf> extra;
};

Checkpoint load_checkpoint(const std::string& path);

/// Order-independent fingerprint of the encoder-side tensors (token and
/// positional embeddings, encoder blocks, contrast head).
uint64_t encoder_hash(const Params<float>& p);

// Matrix helpers shared with the objectives and trainer modules.
// C += A * B, C += A^T * B, C += A * B^T over row-major Mats.
template <class T>
void matmul_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c);
template <class T>
void matmul_tA_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c);
template <class T>
void matmul_tB_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c);

extern template struct Params<float>;
extern template struct Params<double>;

}  // namespace lease::net
