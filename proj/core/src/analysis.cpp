#include "lease/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

#include "lease/io.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lease::analysis {

CooccurrenceMatrix cooccurrence(const tokenstore::Dataset& ds, int threads) {
  CooccurrenceMatrix m;
  m.gen_vocab = ds.gen_vocab();
  m.disc_vocab = ds.disc_vocab();
  m.counts.assign(static_cast<size_t>(m.gen_vocab) * m.disc_vocab, 0);

  const int n = static_cast<int>(ds.size());
  const int nthreads = std::max(1, threads);
  std::vector<std::vector<uint64_t>> partial(nthreads);
  for (auto& p : partial) p.assign(m.counts.size(), 0);

#pragma omp parallel for schedule(static) num_threads(nthreads)
  for (int i = 0; i < n; ++i) {
    int tid = 0;
#ifdef _OPENMP
    tid = omp_get_thread_num();
#endif
    std::vector<uint64_t>& c = partial[tid];
    const tokenstore::TokenPairSample& s = ds.samples[i];
    for (size_t p = 0; p < s.gen.size(); ++p)
      ++c[static_cast<size_t>(s.gen[p]) * m.disc_vocab + s.disc[p]];
  }
  // Deterministic merge in thread order.
  for (const auto& p : partial)
    for (size_t i = 0; i < m.counts.size(); ++i) m.counts[i] += p[i];
  for (uint64_t c : m.counts) m.total += c;
  return m;
}

EntropyResult conditional_entropy(const CooccurrenceMatrix& m, Direction dir) {
  if (m.total == 0) throw std::invalid_argument("empty co-occurrence matrix");
  // Conditioning tokens index the result; the opposite axis is summed out.
  const bool gen_given_disc = dir == Direction::kGenGivenDisc;
  const uint32_t cond_vocab = gen_given_disc ? m.disc_vocab : m.gen_vocab;
  const uint32_t other_vocab = gen_given_disc ? m.gen_vocab : m.disc_vocab;

  EntropyResult r;
  r.per_token.assign(cond_vocab, 0.0);
  r.present.assign(cond_vocab, 0);

  double weighted = 0.0;
  for (uint32_t t = 0; t < cond_vocab; ++t) {
    uint64_t marginal = 0;
    for (uint32_t o = 0; o < other_vocab; ++o)
      marginal += gen_given_disc ? m.at(o, t) : m.at(t, o);
    if (marginal == 0) continue;
    r.present[t] = 1;
    ++r.present_count;
    double h = 0.0;
    for (uint32_t o = 0; o < other_vocab; ++o) {
      const uint64_t c = gen_given_disc ? m.at(o, t) : m.at(t, o);
      if (c == 0) continue;
      const double p = static_cast<double>(c) / static_cast<double>(marginal);
      h -= p * std::log(p);
    }
    r.per_token[t] = h;
    weighted += h * static_cast<double>(marginal) / static_cast<double>(m.total);
  }
  r.scalar = weighted;
  return r;
}

std::vector<PmiEntry> pmi_top(const CooccurrenceMatrix& m, int top_n) {
  if (m.total == 0) throw std::invalid_argument("empty co-occurrence matrix");
  if (top_n < 1) throw std::invalid_argument("top_n must be >= 1");

  std::vector<uint64_t> gen_marginal(m.gen_vocab, 0);
  std::vector<uint64_t> disc_marginal(m.disc_vocab, 0);
  for (uint32_t g = 0; g < m.gen_vocab; ++g)
    for (uint32_t d = 0; d < m.disc_vocab; ++d) {
      const uint64_t c = m.at(g, d);
      gen_marginal[g] += c;
      disc_marginal[d] += c;
    }

  std::vector<PmiEntry> entries;
  const double ln_total = std::log(static_cast<double>(m.total));
  for (uint32_t g = 0; g < m.gen_vocab; ++g)
    for (uint32_t d = 0; d < m.disc_vocab; ++d) {
      const uint64_t c = m.at(g, d);
      if (c == 0) continue;  // zero cells are excluded, not smoothed
      const double pmi = std::log(static_cast<double>(c)) + ln_total -
                         std::log(static_cast<double>(gen_marginal[g])) -
                         std::log(static_cast<double>(disc_marginal[d]));
      entries.push_back({g, d, pmi});
    }

  const size_t keep = std::min(static_cast<size_t>(top_n), entries.size());
  std::partial_sort(entries.begin(), entries.begin() + keep, entries.end(),
                    [](const PmiEntry& a, const PmiEntry& b) {
                      if (a.pmi != b.pmi) return a.pmi > b.pmi;
                      if (a.gen != b.gen) return a.gen < b.gen;
                      return a.disc < b.disc;
                    });
  entries.resize(keep);
  return entries;
}

std::vector<double> class_token_distribution(const tokenstore::Dataset& ds, Which which,
                                             int top_k) {
  if (!ds.header.has_labels) throw std::invalid_argument("class curves need a labeled dataset");
  if (top_k < 1) throw std::invalid_argument("top_k must be >= 1");
  if (ds.size() == 0) throw std::invalid_argument("empty dataset");

  const uint32_t vocab = which == Which::kGen ? ds.gen_vocab() : ds.disc_vocab();
  std::map<int32_t, std::vector<uint64_t>> per_class;
  for (const auto& s : ds.samples) {
    auto& counts = per_class.try_emplace(s.label, std::vector<uint64_t>(vocab, 0)).first->second;
    const auto& tokens = which == Which::kGen ? s.gen : s.disc;
    for (uint16_t t : tokens) ++counts[t];
  }

  std::vector<double> curve(top_k, 0.0);
  for (const auto& [label, counts] : per_class) {
    std::vector<double> freq(counts.begin(), counts.end());
    uint64_t total = 0;
    for (uint64_t c : counts) total += c;
    std::sort(freq.begin(), freq.end(), std::greater<double>());
    for (int r = 0; r < top_k && r < static_cast<int>(freq.size()); ++r)
      curve[r] += freq[r] / static_cast<double>(total);
  }
  for (double& x : curve) x /= static_cast<double>(per_class.size());
  return curve;
}

Report analyze(const tokenstore::Dataset& ds, int top_pairs, int top_k, int threads) {
  const CooccurrenceMatrix m = cooccurrence(ds, threads);
  Report r;
  r.positions = m.total;
  const EntropyResult hgd = conditional_entropy(m, Direction::kGenGivenDisc);
  const EntropyResult hdg = conditional_entropy(m, Direction::kDiscGivenGen);
  r.h_gen_given_disc = hgd.scalar;
  r.h_disc_given_gen = hdg.scalar;
  r.disc_tokens_present = hgd.present_count;
  r.gen_tokens_present = hdg.present_count;
  r.top_pmi = pmi_top(m, top_pairs);
  if (ds.header.has_labels) {
    r.gen_curve = class_token_distribution(ds, Which::kGen, top_k);
    r.disc_curve = class_token_distribution(ds, Which::kDisc, top_k);
  }
  return r;
}

namespace {

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

}  // namespace

void write_report(const Report& r, std::ostream& os) {
  os << "[entropy]\n";
  os << "H_gen_given_disc=" << fmt(r.h_gen_given_disc) << "\n";
  os << "H_disc_given_gen=" << fmt(r.h_disc_given_gen) << "\n";
  os << "disc_tokens_present=" << r.disc_tokens_present << "\n";
  os << "gen_tokens_present=" << r.gen_tokens_present << "\n";
  os << "positions=" << r.positions << "\n";
  os << "[pmi-top]\n";
  for (size_t i = 0; i < r.top_pmi.size(); ++i)
    os << "pair_" << i << "=g:" << r.top_pmi[i].gen << ",d:" << r.top_pmi[i].disc
       << ",pmi:" << fmt(r.top_pmi[i].pmi) << "\n";
  os << "[class-curves]\n";
  for (size_t i = 0; i < r.gen_curve.size(); ++i)
    os << "gen_" << i << "=" << fmt(r.gen_curve[i]) << "\n";
  for (size_t i = 0; i < r.disc_curve.size(); ++i)
    os << "disc_" << i << "=" << fmt(r.disc_curve[i]) << "\n";
}

void write_curve_csv(const std::vector<double>& curve, const std::string& path) {
  io::Writer w(path);
  const std::string header = "rank,value\n";
  w.bytes(header.data(), header.size());
  for (size_t i = 0; i < curve.size(); ++i) {
    char buf[64];
    const int len = std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", i, curve[i]);
    w.bytes(buf, static_cast<size_t>(len));
  }
  w.close();
}

}  // namespace lease::analysis
