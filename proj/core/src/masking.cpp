#include "lease/masking.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lease::masking {

void MaskRatioConfig::validate() const {
  if (!(min <= mode && mode <= max)) throw std::invalid_argument("need min <= mode <= max");
  if (!(std > 0.0)) throw std::invalid_argument("ratio std must be positive");
  if (min < 0.0 || max > 1.0) throw std::invalid_argument("ratio bounds outside [0,1]");
}

double sample_ratio(const MaskRatioConfig& cfg, Rng& rng) {
  // Rejection keeps the truncated-normal shape; a clamp would pile mass on
  // the interval ends and shift the mean.
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const double r = cfg.mode + cfg.std * rng.normal();
    if (r >= cfg.min && r <= cfg.max) return r;
  }
  return cfg.mode;  // unreachable for any sane config
}

MaskPlan build_plan(int seq_len, double ratio, Rng& rng) {
  if (seq_len <= 0 || seq_len % 2 != 0) throw std::invalid_argument("sequence length must be even");
  if (ratio < 0.5 || ratio > 1.0) throw std::invalid_argument("ratio outside [0.5, 1.0]");

  const int half = seq_len / 2;
  const int masked_count = static_cast<int>(std::ceil(ratio * seq_len));

  MaskPlan plan;
  plan.ratio = ratio;
  plan.masked.assign(seq_len, 0);

  // Uniform masked set without replacement (partial Fisher-Yates).
  std::vector<int> order(seq_len);
  for (int i = 0; i < seq_len; ++i) order[i] = i;
  for (int i = 0; i < masked_count; ++i) {
    const int j = i + static_cast<int>(rng.uniform_int(seq_len - i));
    std::swap(order[i], order[j]);
    plan.masked[order[i]] = 1;
  }

  const int unmasked_count = seq_len - masked_count;
  plan.retained_masked_count = half - unmasked_count;

  // Survivors of the drop: every unmasked position plus a uniform subset of
  // masked ones. order[0..masked_count) is already a uniform permutation of
  // the masked set, so its prefix is a uniform subset.
  plan.retained.reserve(half);
  for (int i = 0; i < seq_len; ++i)
    if (!plan.masked[i]) plan.retained.push_back(i);
  for (int i = 0; i < plan.retained_masked_count; ++i) plan.retained.push_back(order[i]);
  std::sort(plan.retained.begin(), plan.retained.end());
  return plan;
}

std::vector<int> apply_plan(std::span<const uint16_t> gen_tokens, const MaskPlan& plan,
                            int mask_id, int cls_id) {
  if (static_cast<int>(gen_tokens.size()) != plan.seq_len())
    throw std::invalid_argument("token sequence does not match the plan length");
  std::vector<int> out;
  out.reserve(1 + plan.retained.size());
  out.push_back(cls_id);
  for (const int pos : plan.retained)
    out.push_back(plan.masked[pos] ? mask_id : static_cast<int>(gen_tokens[pos]));
  return out;
}

}  // namespace lease::masking
