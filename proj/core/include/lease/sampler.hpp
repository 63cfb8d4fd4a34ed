#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lease/codebook.hpp"
#include "lease/net.hpp"
#include "lease/tokenstore.hpp"
#include "lease/trainer.hpp"

namespace lease::sampler {

/// Iterative masked decoding schedule. After step s (1-based), the number of
/// committed tokens is keep_count(s) = ceil(SS * cos(pi/2 * (S-s)/S)),
/// which reaches SS at s = S.
struct DecodeSchedule {
  int steps = 8;
  double temperature = 1.0;

  void validate() const;
};

int keep_count(int seq_len, int steps, int step);

/// Per-step snapshots of the decoding state, for schedule verification.
struct GenerationTrace {
  std::vector<std::vector<int>> tokens_after_step;   // [MASK] id where open
  std::vector<std::vector<uint8_t>> fixed_after_step;
};

/// Unconditional generation: start from an all-[MASK] sequence, re-predict
/// every still-open position each step, commit the most confident
/// predictions per the cosine schedule. Confidence is the model probability
/// of the sampled token plus Gumbel noise scaled by temperature and annealed
/// linearly to zero across steps. temperature == 0 is greedy and
/// deterministic. Committed tokens are never resampled.
std::vector<uint16_t> generate_unconditional(const net::Params<float>& params,
                                             const DecodeSchedule& schedule, Rng& rng,
                                             GenerationTrace* trace = nullptr);

/// Same loop with the class token and centroid tail appended to the decoder
/// input at every step. Requires a conditional checkpoint.
std::vector<uint16_t> generate_conditional(const net::Params<float>& params, int class_id,
                                           const DecodeSchedule& schedule, Rng& rng,
                                           GenerationTrace* trace = nullptr);

struct FinetuneConfig {
  double base_lr = 1.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.05;
  double grad_clip = 3.0;
  double label_smoothing = 0.1;
  int batch_size = 64;
  int warmup_epochs = 0;
  int total_epochs = 10;
  uint64_t seed = 0;
  int threads = 1;
  int log_every = 10;
  masking::MaskRatioConfig mask;
};

/// Decoder-only conditional fine-tune: the encoder (and everything feeding
/// it) is frozen, the reverse pass stops at the canvas, and only the
/// decoder, the learned class table, and the centroid projection update.
/// The centroid tail is the given codebook, normalized. Loss is the
/// reconstruction objective alone.
net::Params<float> finetune_conditional_decoder(const net::Params<float>& pretrained,
                                                const tokenstore::Dataset& ds,
                                                const codebook::Codebook& cb, int class_count,
                                                const FinetuneConfig& cfg,
                                                std::ostream* metrics = nullptr);

/// Emits generated sequences in the token dataset format with the gen-only
/// header flag set and disc tokens zeroed. Conditional batches carry labels.
tokenstore::Dataset tokens_to_dataset(const std::vector<std::vector<uint16_t>>& sequences,
                                      const std::vector<int32_t>& labels, uint32_t gen_vocab);

}  // namespace lease::sampler
