#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lease/common.hpp"
#include "lease/codebook.hpp"

namespace lease::objectives {

/// Per-step loss record. total = L_R + lambda * L_C within 1e-9.
struct LossReport {
  double recon = 0.0;     // L_R, nats per masked token
  double contrast = 0.0;  // L_C, nats per unmasked token
  double total = 0.0;
  uint64_t unmasked_count = 0;        // N_u
  uint64_t masked_loss_positions = 0;
};

/// Mean cross-entropy over masked canvas positions between the smoothed
/// one-hot target (1-eps on the target, eps/v_max elsewhere) and
/// softmax(logits). Unmasked positions contribute nothing. Throws
/// std::invalid_argument when no position is masked.
template <class T>
double recon_loss(const Mat<T>& logits, std::span<const uint16_t> targets,
                  std::span<const uint8_t> canvas_mask, double label_smoothing,
                  Mat<T>* dlogits = nullptr);

struct ContrastResult {
  double loss = 0.0;
  bool valid = false;  // false when there were no unmasked tokens
};

/// Eq-style codebook contrast: per unmasked token, soft targets from
/// neighbor_weights over {anchor, neighbors}, log-softmax over all K
/// centroids at temperature alpha; every non-selected centroid acts as a
/// negative through the denominator. Mean over the N_u tokens.
/// When dz is requested it receives dLoss/dz (same shape as z).
template <class T>
ContrastResult contrast_loss(const Mat<T>& z, std::span<const uint16_t> disc_tokens,
                             const codebook::Codebook& cb,
                             const codebook::NeighborTable& table, double tau,
                             double alpha, Mat<T>* dz = nullptr);

/// L_R + lambda * L_C.
double total_loss(double recon, double contrast, double lambda);

}  // namespace lease::objectives
