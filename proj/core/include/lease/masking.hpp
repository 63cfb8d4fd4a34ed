#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lease/common.hpp"

namespace lease::masking {

/// Truncated-normal masking ratio sampler parameters.
struct MaskRatioConfig {
  double min = 0.5;
  double max = 1.0;
  double mode = 0.55;
  double std = 0.25;

  void validate() const;
};

/// One masking decision for a sequence of length SS: which positions are
/// masked, and which positions (all unmasked ones plus enough masked ones to
/// reach SS/2) survive the drop. `retained` is strictly increasing.
struct MaskPlan {
  double ratio = 0.0;
  std::vector<uint8_t> masked;   // length SS
  std::vector<int> retained;     // length SS/2, sorted ascending
  int retained_masked_count = 0;

  int seq_len() const { return static_cast<int>(masked.size()); }
  int masked_count() const {
    int c = 0;
    for (uint8_t m : masked) c += m;
    return c;
  }
};

/// Draws from Normal(mode, std^2) and rejects until the draw lands in
/// [min, max]. Rejection keeps the mean at the truncated-normal value instead
/// of piling mass on the interval ends.
double sample_ratio(const MaskRatioConfig& cfg, Rng& rng);

/// ceil(ratio*SS) positions masked uniformly at random; retained = all
/// unmasked positions plus a uniform subset of masked ones, total SS/2.
MaskPlan build_plan(int seq_len, double ratio, Rng& rng);

/// Encoder input of length 1 + SS/2: [CLS] then, in original order, the gen
/// token for retained unmasked positions and mask_id for retained masked
/// ones. Position ids for the encoder are the plan's retained list.
std::vector<int> apply_plan(std::span<const uint16_t> gen_tokens, const MaskPlan& plan,
                            int mask_id, int cls_id);

}  // namespace lease::masking
