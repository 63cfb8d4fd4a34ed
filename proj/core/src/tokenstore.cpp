#include "lease/tokenstore.hpp"

#include <algorithm>
#include <limits>

#include "lease/codebook.hpp"
#include "lease/io.hpp"

namespace lease::tokenstore {

void validate(const Dataset& ds) {
  const DatasetHeader& h = ds.header;
  if (h.gen_vocab == 0 || h.gen_vocab > kMaxGenVocab)
    throw DataError("gen vocabulary out of range: " + std::to_string(h.gen_vocab));
  if (h.disc_vocab == 0 || h.disc_vocab > kMaxDiscVocab)
    throw DataError("disc vocabulary out of range: " + std::to_string(h.disc_vocab));
  if (ds.samples.size() != h.num_samples)
    throw DataError("sample count does not match header");
  for (const TokenPairSample& s : ds.samples) {
    if (s.gen.size() != h.seq_len || s.disc.size() != h.seq_len)
      throw DataError("inconsistent sequence length");
    for (uint16_t t : s.gen)
      if (t >= h.gen_vocab) throw DataError("gen token exceeds vocabulary");
    for (uint16_t t : s.disc)
      if (t >= h.disc_vocab) throw DataError("disc token exceeds vocabulary");
    if (h.has_labels && s.label < 0) throw DataError("labeled dataset holds a negative label");
  }
}

void write_dataset(const Dataset& ds, const std::string& path) {
  validate(ds);
  io::Writer w(path);
  w.magic("LSTK");
  w.u32(ds.header.version | (ds.header.gen_only ? kGenOnlyFlag : 0u));
  w.u32(ds.header.num_samples);
  w.u32(ds.header.seq_len);
  w.u32(ds.header.gen_vocab);
  w.u32(ds.header.disc_vocab);
  w.u8(ds.header.has_labels ? 1 : 0);
  w.pad(3);
  for (const TokenPairSample& s : ds.samples) {
    if (ds.header.has_labels) w.u32(static_cast<uint32_t>(s.label));
    w.u16_array(s.gen.data(), s.gen.size());
    w.u16_array(s.disc.data(), s.disc.size());
  }
  w.close();
}

Dataset read_dataset(const std::string& path) {
  io::Reader r(path);
  r.magic("LSTK");
  Dataset ds;
  const uint32_t raw_version = r.u32();
  ds.header.gen_only = (raw_version & kGenOnlyFlag) != 0;
  ds.header.version = raw_version & ~kGenOnlyFlag;
  if (ds.header.version != kDatasetVersion)
    throw DataError("unsupported dataset version in " + path);
  ds.header.num_samples = r.u32();
  ds.header.seq_len = r.u32();
  ds.header.gen_vocab = r.u32();
  ds.header.disc_vocab = r.u32();
  ds.header.has_labels = r.u8() != 0;
  r.skip(3);
  if (ds.header.gen_vocab == 0 || ds.header.gen_vocab > kMaxGenVocab ||
      ds.header.disc_vocab == 0 || ds.header.disc_vocab > kMaxDiscVocab)
    throw DataError("vocabulary out of range in " + path);

  ds.samples.resize(ds.header.num_samples);
  for (TokenPairSample& s : ds.samples) {
    if (ds.header.has_labels) s.label = static_cast<int32_t>(r.u32());
    s.gen.resize(ds.header.seq_len);
    s.disc.resize(ds.header.seq_len);
    r.u16_array(s.gen.data(), s.gen.size());
    r.u16_array(s.disc.data(), s.disc.size());
  }
  if (!r.at_eof()) throw DataError("trailing bytes in " + path);
  validate(ds);
  return ds;
}

void write_features(const FeatureDump& fd, const std::string& path) {
  if (fd.data.size() != static_cast<size_t>(fd.num_samples) * fd.seq_len * fd.dim)
    throw DataError("feature buffer does not match its header");
  io::Writer w(path);
  w.magic("LSFT");
  w.u32(1);
  w.u32(fd.num_samples);
  w.u32(fd.seq_len);
  w.u32(fd.dim);
  w.f32_array(fd.data.data(), fd.data.size());
  w.close();
}

FeatureDump read_features(const std::string& path) {
  io::Reader r(path);
  r.magic("LSFT");
  if (r.u32() != 1) throw DataError("unsupported feature dump version in " + path);
  FeatureDump fd;
  fd.num_samples = r.u32();
  fd.seq_len = r.u32();
  fd.dim = r.u32();
  if (fd.dim == 0 || fd.seq_len == 0) throw DataError("degenerate feature shape in " + path);
  fd.data.resize(static_cast<size_t>(fd.num_samples) * fd.seq_len * fd.dim);
  r.f32_array(fd.data.data(), fd.data.size());
  if (!r.at_eof()) throw DataError("trailing bytes in " + path);
  return fd;
}

namespace {

uint16_t nearest_centroid(const float* x, const Matf& centroids) {
  const int k = centroids.rows;
  const int d = centroids.cols;
  int best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int c = 0; c < k; ++c) {
    const float* row = centroids[c];
    double d2 = 0.0;
    for (int j = 0; j < d; ++j) {
      const double diff = static_cast<double>(x[j]) - static_cast<double>(row[j]);
      d2 += diff * diff;
    }
    if (d2 < best_d2) {  // strict: ties keep the lowest index
      best_d2 = d2;
      best = c;
    }
  }
  return static_cast<uint16_t>(best);
}

}  // namespace

std::vector<std::vector<uint16_t>> assign_disc_tokens(const FeatureDump& features,
                                                      const codebook::Codebook& cb,
                                                      int threads) {
  if (static_cast<int>(features.dim) != cb.dim())
    throw std::invalid_argument("feature dimension does not match the codebook");
  const int n = static_cast<int>(features.num_samples);
  std::vector<std::vector<uint16_t>> out(n);
#pragma omp parallel for schedule(static) num_threads(threads > 0 ? threads : 1)
  for (int i = 0; i < n; ++i) {
    std::vector<uint16_t> row(features.seq_len);
    for (uint32_t p = 0; p < features.seq_len; ++p)
      row[p] = nearest_centroid(features.at(i, p), cb.centroids);
    out[i] = std::move(row);
  }
  return out;
}

void SynthConfig::validate() const {
  if (num_classes == 0 || samples_per_class == 0) throw std::invalid_argument("empty synth shape");
  if (num_classes > disc_vocab) throw std::invalid_argument("more classes than disc tokens");
  if (gen_vocab < 2) throw std::invalid_argument("gen vocabulary must be at least 2");
  if (gen_vocab > kMaxGenVocab || disc_vocab > kMaxDiscVocab)
    throw std::invalid_argument("vocabulary too large for 16-bit tokens");
  if (seq_len == 0) throw std::invalid_argument("sequence length must be positive");
  if (class_noise < 0.0 || class_noise > 1.0) throw std::invalid_argument("class noise outside [0,1]");
  if (gen_map_noise < 0.0 || gen_map_noise > 1.0)
    throw std::invalid_argument("gen map noise outside [0,1]");
}

Dataset synth_dataset(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, 0x53594E5448ull));  // "SYNTH" stream

  std::vector<std::vector<uint16_t>> prototypes(cfg.num_classes);
  for (auto& proto : prototypes) {
    proto.resize(cfg.seq_len);
    for (auto& t : proto) t = static_cast<uint16_t>(rng.uniform_int(cfg.disc_vocab));
  }

  Dataset ds;
  ds.header.num_samples = cfg.num_classes * cfg.samples_per_class;
  ds.header.seq_len = cfg.seq_len;
  ds.header.gen_vocab = cfg.gen_vocab;
  ds.header.disc_vocab = cfg.disc_vocab;
  ds.header.has_labels = true;
  ds.samples.reserve(ds.header.num_samples);

  for (uint32_t c = 0; c < cfg.num_classes; ++c) {
    for (uint32_t s = 0; s < cfg.samples_per_class; ++s) {
      TokenPairSample sample;
      sample.label = static_cast<int32_t>(c);
      sample.disc.resize(cfg.seq_len);
      sample.gen.resize(cfg.seq_len);
      for (uint32_t i = 0; i < cfg.seq_len; ++i) {
        uint16_t d = prototypes[c][i];
        if (rng.uniform() < cfg.class_noise)
          d = static_cast<uint16_t>(rng.uniform_int(cfg.disc_vocab));
        sample.disc[i] = d;
        uint16_t g = static_cast<uint16_t>(d % cfg.gen_vocab);
        if (rng.uniform() < cfg.gen_map_noise)
          g = static_cast<uint16_t>(rng.uniform_int(cfg.gen_vocab));
        sample.gen[i] = g;
      }
      ds.samples.push_back(std::move(sample));
    }
  }
  return ds;
}

}  // namespace lease::tokenstore
