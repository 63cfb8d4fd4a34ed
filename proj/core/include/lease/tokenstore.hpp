#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lease/common.hpp"

namespace lease::codebook {
struct Codebook;
}

namespace lease::tokenstore {

constexpr uint32_t kDatasetVersion = 1;
/// Version bit marking files whose disc tokens are placeholders (generated
/// token dumps carry real gen tokens only).
constexpr uint32_t kGenOnlyFlag = 0x80000000u;

constexpr uint32_t kMaxGenVocab = 65534;   // one u16 value reserved for [MASK]
constexpr uint32_t kMaxDiscVocab = 65535;

/// One image worth of position-aligned token pairs. Index i in gen and disc
/// refers to the same patch.
struct TokenPairSample {
  std::vector<uint16_t> gen;
  std::vector<uint16_t> disc;
  int32_t label = -1;  // meaningful only when the dataset has labels
};

struct DatasetHeader {
  uint32_t version = kDatasetVersion;
  uint32_t num_samples = 0;
  uint32_t seq_len = 0;    // SS
  uint32_t gen_vocab = 0;  // v_max
  uint32_t disc_vocab = 0; // K
  bool has_labels = false;
  bool gen_only = false;
};

struct Dataset {
  DatasetHeader header;
  std::vector<TokenPairSample> samples;

  uint32_t seq_len() const { return header.seq_len; }
  uint32_t gen_vocab() const { return header.gen_vocab; }
  uint32_t disc_vocab() const { return header.disc_vocab; }
  size_t size() const { return samples.size(); }
};

/// Checks every invariant the header and samples promise; throws DataError.
void validate(const Dataset& ds);

/// Binary layout: magic "LSTK", u32 version, u32 num_samples, u32 SS,
/// u32 v_max, u32 K, u8 has_labels, 3 pad bytes; per sample an optional
/// u32 label then SS u16 gen tokens and SS u16 disc tokens.
void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

/// Feature dump ("LSFT"): num_samples x SS x D f32, row-major.
struct FeatureDump {
  uint32_t num_samples = 0;
  uint32_t seq_len = 0;
  uint32_t dim = 0;
  std::vector<float> data;  // num_samples * seq_len * dim

  const float* at(uint32_t sample, uint32_t pos) const {
    return data.data() + (static_cast<size_t>(sample) * seq_len + pos) * dim;
  }
};

void write_features(const FeatureDump& fd, const std::string& path);
FeatureDump read_features(const std::string& path);

/// Nearest-centroid assignment under squared Euclidean distance on raw
/// centroids; ties break to the lowest centroid index. Output is aligned
/// position-by-position with the input features.
std::vector<std::vector<uint16_t>> assign_disc_tokens(const FeatureDump& features,
                                                      const codebook::Codebook& cb,
                                                      int threads = 1);

struct SynthConfig {
  uint32_t num_classes = 10;
  uint32_t samples_per_class = 200;
  uint32_t seq_len = 16;
  uint32_t gen_vocab = 64;
  uint32_t disc_vocab = 128;
  double class_noise = 0.1;    // epsilon: per-position prototype corruption
  double gen_map_noise = 0.05; // delta: per-position gen-map corruption
  uint64_t seed = 0;

  void validate() const;
};

/// Labeled synthetic dataset: each class owns a prototype disc sequence; disc
/// positions copy the prototype with probability 1-epsilon, else uniform;
/// gen positions equal disc mod v_max with probability 1-delta, else uniform.
/// Fully deterministic given the seed.
Dataset synth_dataset(const SynthConfig& cfg);

}  // namespace lease::tokenstore
