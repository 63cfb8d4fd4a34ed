#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lease/tokenstore.hpp"

namespace lease::analysis {

/// Patch-aligned token co-occurrence counts: counts[g][d] = number of
/// positions where gen token g and disc token d describe the same patch.
struct CooccurrenceMatrix {
  uint32_t gen_vocab = 0;
  uint32_t disc_vocab = 0;
  std::vector<uint64_t> counts;  // gen_vocab x disc_vocab, row-major
  uint64_t total = 0;

  uint64_t at(uint32_t g, uint32_t d) const {
    return counts[static_cast<size_t>(g) * disc_vocab + d];
  }
};

CooccurrenceMatrix cooccurrence(const tokenstore::Dataset& ds, int threads = 1);

enum class Direction { kGenGivenDisc, kDiscGivenGen };

/// Per-token conditional entropies in nats. Tokens with zero marginal count
/// are absent (present flag false), not zero. The scalar is the
/// marginal-weighted mean of the per-token entropies.
struct EntropyResult {
  std::vector<double> per_token;
  std::vector<uint8_t> present;
  double scalar = 0.0;
  uint32_t present_count = 0;
};

EntropyResult conditional_entropy(const CooccurrenceMatrix& m, Direction dir);

struct PmiEntry {
  uint32_t gen = 0;
  uint32_t disc = 0;
  double pmi = 0.0;
};

/// ln[p(g,d) / (p(g) p(d))] over cells with nonzero count; returns the
/// top_n largest, descending, ties by (g, d) lexicographic.
std::vector<PmiEntry> pmi_top(const CooccurrenceMatrix& m, int top_n);

enum class Which { kGen, kDisc };

/// Per class: empirical token frequencies sorted descending, truncated to
/// top_k; averaged across classes. Requires labels.
std::vector<double> class_token_distribution(const tokenstore::Dataset& ds, Which which,
                                             int top_k);

struct Report {
  double h_gen_given_disc = 0.0;
  double h_disc_given_gen = 0.0;
  uint32_t disc_tokens_present = 0;
  uint32_t gen_tokens_present = 0;
  uint64_t positions = 0;
  std::vector<PmiEntry> top_pmi;
  std::vector<double> gen_curve;   // empty when the dataset is unlabeled
  std::vector<double> disc_curve;
};

Report analyze(const tokenstore::Dataset& ds, int top_pairs, int top_k, int threads = 1);

/// ASCII report with [entropy], [pmi-top] and [class-curves] sections of
/// key=value lines.
void write_report(const Report& r, std::ostream& os);

/// CSV sidecar (rank,value) for one averaged class curve.
void write_curve_csv(const std::vector<double>& curve, const std::string& path);

}  // namespace lease::analysis
