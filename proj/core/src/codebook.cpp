#include "lease/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lease/io.hpp"

namespace lease::codebook {

void validate(const Codebook& cb) {
  if (cb.k() < 1 || cb.dim() < 1) throw DataError("degenerate codebook shape");
  if (!all_finite(cb.centroids)) throw DataError("codebook holds non-finite values");
  if (cb.normalized) {
    for (int i = 0; i < cb.k(); ++i) {
      double n2 = 0.0;
      const float* row = cb.centroids[i];
      for (int j = 0; j < cb.dim(); ++j) n2 += static_cast<double>(row[j]) * row[j];
      if (std::abs(std::sqrt(n2) - 1.0) > 1e-6)
        throw DataError("normalized codebook row " + std::to_string(i) + " is not unit norm");
    }
  }
}

namespace {

double sq_dist(const float* a, const double* b, int d) {
  double s = 0.0;
  for (int j = 0; j < d; ++j) {
    const double diff = static_cast<double>(a[j]) - b[j];
    s += diff * diff;
  }
  return s;
}

}  // namespace

KMeansResult kmeans_fit(const Matf& features, int k, int max_iters, uint64_t seed, int threads) {
  const int n = features.rows;
  const int d = features.cols;
  if (k < 1) throw std::invalid_argument("k must be positive");
  if (n < k) throw std::invalid_argument("fewer points than clusters");
  if (max_iters < 1) throw std::invalid_argument("max_iters must be positive");
  if (!all_finite(features)) throw std::invalid_argument("non-finite features");
  if (threads < 1) threads = 1;

  Rng rng(mix_seed(seed, 0x4B4D4541ull));  // "KMEA" stream

  // k-means++ seeding, all distance math in double.
  std::vector<double> centroids(static_cast<size_t>(k) * d);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  {
    const int first = static_cast<int>(rng.uniform_int(n));
    for (int j = 0; j < d; ++j) centroids[j] = features[first][j];
    for (int c = 1; c < k; ++c) {
      const double* prev = centroids.data() + static_cast<size_t>(c - 1) * d;
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        d2[i] = std::min(d2[i], sq_dist(features[i], prev, d));
        total += d2[i];
      }
      int pick = -1;
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
          acc += d2[i];
          if (acc >= target) {
            pick = i;
            break;
          }
        }
        if (pick < 0) pick = n - 1;
      } else {
        // All remaining mass is zero (duplicated points); any pick is
        // equivalent, take index c for determinism.
        pick = std::min(c, n - 1);
      }
      double* dst = centroids.data() + static_cast<size_t>(c) * d;
      for (int j = 0; j < d; ++j) dst[j] = features[pick][j];
    }
  }

  KMeansResult result;
  result.assignments.assign(n, -1);
  std::vector<int> prev_assign(n, -2);
  std::vector<double> point_d2(n, 0.0);

  for (int iter = 0; iter < max_iters; ++iter) {
    // Assignment: parallel over points, each independent.
    double inertia = 0.0;
#pragma omp parallel for schedule(static) num_threads(threads)
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d2 = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double dist = sq_dist(features[i], centroids.data() + static_cast<size_t>(c) * d, d);
        if (dist < best_d2) {
          best_d2 = dist;
          best = c;
        }
      }
      result.assignments[i] = best;
      point_d2[i] = best_d2;
    }
    // Index-ordered reduction keeps the result thread-count independent.
    for (int i = 0; i < n; ++i) inertia += point_d2[i];
    result.inertia_history.push_back(inertia);
    result.inertia = inertia;
    result.iterations = iter + 1;

    if (result.assignments == prev_assign) break;
    prev_assign = result.assignments;

    // Update: accumulate means in index order.
    std::vector<double> sums(static_cast<size_t>(k) * d, 0.0);
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      const int c = result.assignments[i];
      double* dst = sums.data() + static_cast<size_t>(c) * d;
      const float* src = features[i];
      for (int j = 0; j < d; ++j) dst[j] += src[j];
      ++counts[c];
    }
    std::vector<uint8_t> taken(n, 0);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        double* dst = centroids.data() + static_cast<size_t>(c) * d;
        for (int j = 0; j < d; ++j) dst[j] = sums[static_cast<size_t>(c) * d + j] / counts[c];
      } else {
        // Reseed to the point farthest from its assigned centroid. Moving an
        // unused centroid cannot raise the objective.
        int worst = -1;
        double worst_d2 = -1.0;
        for (int i = 0; i < n; ++i) {
          if (taken[i]) continue;
          if (point_d2[i] > worst_d2) {
            worst_d2 = point_d2[i];
            worst = i;
          }
        }
        taken[worst] = 1;
        double* dst = centroids.data() + static_cast<size_t>(c) * d;
        for (int j = 0; j < d; ++j) dst[j] = features[worst][j];
        prev_assign.assign(n, -2);  // force another iteration
      }
    }
  }

  result.codebook.centroids = Matf(k, d);
  for (int c = 0; c < k; ++c)
    for (int j = 0; j < d; ++j)
      result.codebook.centroids.at(c, j) =
          static_cast<float>(centroids[static_cast<size_t>(c) * d + j]);
  result.codebook.normalized = false;
  return result;
}

Codebook normalize(const Codebook& cb) {
  Codebook out;
  out.centroids = Matf(cb.k(), cb.dim());
  for (int i = 0; i < cb.k(); ++i) {
    double n2 = 0.0;
    const float* src = cb.centroids[i];
    for (int j = 0; j < cb.dim(); ++j) n2 += static_cast<double>(src[j]) * src[j];
    const double norm = std::sqrt(n2);
    if (norm == 0.0) throw std::invalid_argument("zero-norm centroid " + std::to_string(i));
    float* dst = out.centroids[i];
    for (int j = 0; j < cb.dim(); ++j) dst[j] = static_cast<float>(src[j] / norm);
  }
  out.normalized = true;
  return out;
}

NeighborTable build_neighbor_table(const Codebook& cb, int k_sel) {
  if (!cb.normalized) throw std::invalid_argument("neighbor table needs a normalized codebook");
  const int k = cb.k();
  const int d = cb.dim();
  if (k_sel < 1 || k_sel > k - 1) throw std::invalid_argument("k_sel out of range");

  NeighborTable table;
  table.k_sel = k_sel;
  table.indices.resize(static_cast<size_t>(k) * k_sel);
  table.similarities.resize(static_cast<size_t>(k) * k_sel);

  std::vector<std::pair<float, int>> row(k - 1);
  for (int i = 0; i < k; ++i) {
    int m = 0;
    for (int j = 0; j < k; ++j) {
      if (j == i) continue;
      double dot = 0.0;
      const float* a = cb.centroids[i];
      const float* b = cb.centroids[j];
      for (int c = 0; c < d; ++c) dot += static_cast<double>(a[c]) * b[c];
      row[m++] = {static_cast<float>(dot), j};
    }
    std::partial_sort(row.begin(), row.begin() + k_sel, row.end(),
                      [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                      });
    for (int s = 0; s < k_sel; ++s) {
      table.indices[static_cast<size_t>(i) * k_sel + s] = static_cast<uint16_t>(row[s].second);
      table.similarities[static_cast<size_t>(i) * k_sel + s] = row[s].first;
    }
  }
  return table;
}

std::vector<double> neighbor_weights(int anchor, const NeighborTable& table, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("tau must be positive");
  if (anchor < 0 || anchor >= table.k()) throw std::invalid_argument("anchor out of range");
  const int k_sel = table.k_sel;
  std::vector<double> w(k_sel + 1);
  w[0] = 1.0 / tau;  // anchor self-similarity is exactly 1
  const float* sims = table.row_sims(anchor);
  double max_logit = w[0];
  for (int s = 0; s < k_sel; ++s) {
    w[s + 1] = sims[s] / tau;
    max_logit = std::max(max_logit, w[s + 1]);
  }
  double total = 0.0;
  for (double& x : w) {
    x = std::exp(x - max_logit);
    total += x;
  }
  for (double& x : w) x /= total;
  return w;
}

void write_codebook(const Codebook& cb, const std::string& path) {
  validate(cb);
  io::Writer w(path);
  w.magic("LSCB");
  w.u32(1);
  w.u32(static_cast<uint32_t>(cb.k()));
  w.u32(static_cast<uint32_t>(cb.dim()));
  w.u8(cb.normalized ? 1 : 0);
  w.pad(3);
  w.f32_array(cb.centroids.data(), cb.centroids.size());
  w.close();
}

Codebook read_codebook(const std::string& path) {
  io::Reader r(path);
  r.magic("LSCB");
  if (r.u32() != 1) throw DataError("unsupported codebook version in " + path);
  const uint32_t k = r.u32();
  const uint32_t d = r.u32();
  const bool normalized = r.u8() != 0;
  r.skip(3);
  if (k == 0 || d == 0 || k > 65535) throw DataError("codebook shape out of range in " + path);
  Codebook cb;
  cb.centroids = Matf(static_cast<int>(k), static_cast<int>(d));
  r.f32_array(cb.centroids.data(), cb.centroids.size());
  cb.normalized = normalized;
  if (!r.at_eof()) throw DataError("trailing bytes in " + path);
  validate(cb);
  return cb;
}

void write_neighbor_table(const NeighborTable& table, const std::string& path) {
  io::Writer w(path);
  w.magic("LSNN");
  w.u32(1);
  w.u32(static_cast<uint32_t>(table.k()));
  w.u32(static_cast<uint32_t>(table.k_sel));
  for (size_t i = 0; i < table.indices.size(); ++i) {
    w.u16(table.indices[i]);
    w.f32(table.similarities[i]);
  }
  w.close();
}

NeighborTable read_neighbor_table(const std::string& path) {
  io::Reader r(path);
  r.magic("LSNN");
  if (r.u32() != 1) throw DataError("unsupported neighbor table version in " + path);
  const uint32_t k = r.u32();
  const uint32_t k_sel = r.u32();
  if (k == 0 || k_sel == 0 || k_sel >= k)
    throw DataError("neighbor table shape out of range in " + path);
  NeighborTable table;
  table.k_sel = static_cast<int>(k_sel);
  table.indices.resize(static_cast<size_t>(k) * k_sel);
  table.similarities.resize(static_cast<size_t>(k) * k_sel);
  for (size_t i = 0; i < table.indices.size(); ++i) {
    table.indices[i] = r.u16();
    table.similarities[i] = r.f32();
  }
  for (uint32_t a = 0; a < k; ++a) {
    const uint16_t* idx = table.row_indices(static_cast<int>(a));
    const float* sims = table.row_sims(static_cast<int>(a));
    for (uint32_t s = 0; s < k_sel; ++s) {
      if (idx[s] == a) throw DataError("neighbor row contains its own anchor in " + path);
      if (idx[s] >= k) throw DataError("neighbor index out of range in " + path);
      if (sims[s] < -1.0f - 1e-5f || sims[s] > 1.0f + 1e-5f)
        throw DataError("similarity outside [-1,1] in " + path);
      if (s > 0 && sims[s] > sims[s - 1]) throw DataError("similarities not sorted in " + path);
    }
  }
  if (!r.at_eof()) throw DataError("trailing bytes in " + path);
  return table;
}

}  // namespace lease::codebook
