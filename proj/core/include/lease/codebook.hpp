#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lease/common.hpp"

namespace lease::codebook {

/// K centroid vectors in a D-dimensional feature space. Rows are centroids.
struct Codebook {
  Matf centroids;  // K x D
  bool normalized = false;

  int k() const { return centroids.rows; }
  int dim() const { return centroids.cols; }
};

/// Checks centroid finiteness and, when flagged, unit row norms (1e-6).
void validate(const Codebook& cb);

/// Per-centroid top-K_sel cosine neighbors (self excluded), similarities
/// non-increasing, ties broken by lower index.
struct NeighborTable {
  int k_sel = 0;
  std::vector<uint16_t> indices;   // K x k_sel
  std::vector<float> similarities; // K x k_sel

  int k() const {
    return k_sel == 0 ? 0 : static_cast<int>(indices.size()) / k_sel;
  }
  const uint16_t* row_indices(int anchor) const { return indices.data() + static_cast<size_t>(anchor) * k_sel; }
  const float* row_sims(int anchor) const { return similarities.data() + static_cast<size_t>(anchor) * k_sel; }
};

struct KMeansResult {
  Codebook codebook;  // unnormalized centroids
  std::vector<int> assignments;
  std::vector<double> inertia_history;  // one entry per Lloyd iteration
  double inertia = 0.0;
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ initialization. Centroid math runs in
/// double and is reduced in point-index order, so results do not depend on
/// the thread count. Empty clusters are reseeded to the point currently
/// farthest from its assigned centroid.
KMeansResult kmeans_fit(const Matf& features, int k, int max_iters, uint64_t seed,
                        int threads = 1);

/// Divides each row by its Euclidean norm; zero-norm rows are an error.
Codebook normalize(const Codebook& cb);

/// Exhaustive cosine scan over a normalized codebook.
NeighborTable build_neighbor_table(const Codebook& cb, int k_sel);

/// Softmax at temperature tau over {anchor, neighbors}; the anchor enters
/// with self-similarity exactly 1. Weights are returned anchor-first and
/// sum to 1; the anchor weight is always the row maximum.
std::vector<double> neighbor_weights(int anchor, const NeighborTable& table, double tau);

/// Codebook file ("LSCB"): u32 K, u32 D, u8 normalized, 3 pad, K x D f32.
void write_codebook(const Codebook& cb, const std::string& path);
Codebook read_codebook(const std::string& path);

/// Neighbor table file ("LSNN"): u32 K, u32 K_sel, then per anchor
/// K_sel x (u16 index, f32 similarity).
void write_neighbor_table(const NeighborTable& table, const std::string& path);
NeighborTable read_neighbor_table(const std::string& path);

}  // namespace lease::codebook
