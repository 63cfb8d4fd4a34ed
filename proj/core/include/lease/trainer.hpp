#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lease/codebook.hpp"
#include "lease/masking.hpp"
#include "lease/net.hpp"
#include "lease/objectives.hpp"
#include "lease/tokenstore.hpp"

namespace lease::trainer {

struct TrainConfig {
  double base_lr = 1.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.05;
  double grad_clip = 3.0;
  double label_smoothing = 0.1;
  double lambda = 0.1;
  double tau = 0.1;
  double alpha = 0.1;
  int k_sel = 5;
  int batch_size = 64;
  int warmup_epochs = 2;
  int total_epochs = 30;
  int run_epochs = -1;  // execute at most this many epochs this run (-1: all);
                        // the schedule still spans total_epochs
  uint64_t seed = 0;
  int threads = 1;
  int log_every = 10;  // steps between metric records, plus one per epoch
  masking::MaskRatioConfig mask;

  void validate() const;
};

/// Linear warmup from 0 to base_lr over warmup_steps, then cosine decay
/// to exactly 0 at total_steps.
double cosine_lr(uint64_t step, uint64_t warmup_steps, uint64_t total_steps, double base_lr);

/// AdamW state; one slot per parameter tensor, visited in the canonical
/// parameter order.
struct AdamState {
  net::Params<float> m;
  net::Params<float> v;
  uint64_t step = 0;
};

AdamState make_adam_state(const net::Params<float>& params);

/// One decoupled-weight-decay AdamW update with bias correction. Gradients
/// must be finite (NumericError otherwise). `frozen` names are skipped
/// entirely: no moment update, no decay.
void adamw_step(net::Params<float>& params, const net::Params<float>& grads, AdamState& state,
                double lr, double beta1, double beta2, double eps, double weight_decay,
                const std::vector<std::string>& frozen = {});

/// Scales all gradients so the global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
double clip_global_norm(net::Params<float>& grads, double max_norm);

struct EpochStats {
  uint64_t step_end = 0;
  double lr = 0.0;
  double recon = 0.0;
  double contrast = 0.0;
  double total = 0.0;
  uint64_t unmasked = 0;
};

struct TrainResult {
  net::Params<float> params;
  AdamState opt;
  std::vector<EpochStats> epochs;
  uint64_t final_step = 0;
  uint32_t next_epoch = 0;  // first epoch a resumed run would execute
};

/// Resumption marker produced by save/load of a training checkpoint.
struct ResumePoint {
  net::Params<float> params;
  AdamState opt;
  uint32_t next_epoch = 0;
  uint64_t global_step = 0;
};

/// Full pretraining loop: seeded shuffle per epoch, per-sample mask plans,
/// forward/backward, global-norm clip at grad_clip, AdamW at the cosine
/// rate. Metric lines go to `metrics` when non-null, one per log_every
/// steps plus an epoch-mean record per epoch. Deterministic for a fixed
/// seed when threads == 1.
TrainResult train(const tokenstore::Dataset& ds, const codebook::Codebook& cb,
                  const codebook::NeighborTable& table, const net::ModelConfig& mc,
                  const TrainConfig& tc, std::ostream* metrics,
                  const ResumePoint* resume = nullptr);

/// Training checkpoint = model parameters + optimizer state + counters in
/// one LSCK container.
void save_train_checkpoint(const std::string& path, const net::Params<float>& params,
                           const AdamState& opt, uint32_t next_epoch, uint64_t global_step);
ResumePoint load_train_checkpoint(const std::string& path);

enum class Pooling { kCls, kMean };

Pooling pooling_from_name(const std::string& name);

/// Encoder features of the unmasked full sequence ([CLS] + all SS tokens),
/// pooled per sample. Deterministic; dropout disabled.
Matf pooled_features(const net::Params<float>& params, const tokenstore::Dataset& ds,
                     Pooling pooling, int threads = 1);

struct ProbeConfig {
  int epochs = 100;
  double lr = 0.1;
  double train_fraction = 0.5;
  uint64_t seed = 0;
};

/// Multinomial logistic regression on frozen features with a seeded
/// train/test split; returns held-out top-1 accuracy.
double linear_probe(const Matf& features, std::span<const int32_t> labels,
                    const ProbeConfig& cfg);

/// Cosine-similarity k-NN majority vote; vote ties go to the smaller class
/// id. Throws when k exceeds the training set.
double knn_eval(const Matf& train_features, std::span<const int32_t> train_labels,
                const Matf& test_features, std::span<const int32_t> test_labels, int k);

}  // namespace lease::trainer
