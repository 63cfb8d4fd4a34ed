#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lease/analysis.hpp"

using namespace lease;
namespace an = lease::analysis;

namespace {

tokenstore::Dataset make_dataset(uint32_t vgen, uint32_t kdisc,
                                 const std::vector<std::pair<std::vector<uint16_t>,
                                                             std::vector<uint16_t>>>& rows,
                                 bool labels = false) {
  tokenstore::Dataset ds;
  ds.header.gen_vocab = vgen;
  ds.header.disc_vocab = kdisc;
  ds.header.seq_len = rows.empty() ? 2 : static_cast<uint32_t>(rows[0].first.size());
  ds.header.num_samples = static_cast<uint32_t>(rows.size());
  ds.header.has_labels = labels;
  for (const auto& [g, d] : rows) {
    tokenstore::TokenPairSample s;
    s.gen = g;
    s.disc = d;
    ds.samples.push_back(s);
  }
  return ds;
}

}  // namespace

TEST_CASE("co-occurrence worked example") {
  const auto ds = make_dataset(4, 6, {{{0, 1}, {3, 3}}});
  const an::CooccurrenceMatrix m = an::cooccurrence(ds);
  CHECK(m.total == 2);
  CHECK(m.at(0, 3) == 1);
  CHECK(m.at(1, 3) == 1);
  CHECK(m.at(0, 0) == 0);
}

TEST_CASE("co-occurrence of an empty dataset is all zeros") {
  const auto ds = make_dataset(4, 6, {});
  const an::CooccurrenceMatrix m = an::cooccurrence(ds);
  CHECK(m.total == 0);
  for (uint64_t c : m.counts) CHECK(c == 0);
  CHECK_THROWS_AS(an::conditional_entropy(m, an::Direction::kGenGivenDisc),
                  std::invalid_argument);
}

TEST_CASE("co-occurrence is order-invariant") {
  tokenstore::SynthConfig cfg;
  cfg.num_classes = 3;
  cfg.samples_per_class = 20;
  cfg.seq_len = 8;
  cfg.gen_vocab = 8;
  cfg.disc_vocab = 16;
  cfg.seed = 3;
  tokenstore::Dataset ds = tokenstore::synth_dataset(cfg);
  const an::CooccurrenceMatrix before = an::cooccurrence(ds, 2);
  std::reverse(ds.samples.begin(), ds.samples.end());
  const an::CooccurrenceMatrix after = an::cooccurrence(ds, 2);
  CHECK(before.counts == after.counts);
}

TEST_CASE("conditional entropy: deterministic map gives zero") {
  tokenstore::SynthConfig cfg;
  cfg.num_classes = 4;
  cfg.samples_per_class = 50;
  cfg.seq_len = 16;
  cfg.gen_vocab = 16;
  cfg.disc_vocab = 64;
  cfg.class_noise = 0.5;
  cfg.gen_map_noise = 0.0;  // gen is exactly disc mod 16
  cfg.seed = 5;
  const tokenstore::Dataset ds = tokenstore::synth_dataset(cfg);
  const an::CooccurrenceMatrix m = an::cooccurrence(ds);
  const an::EntropyResult h = an::conditional_entropy(m, an::Direction::kGenGivenDisc);
  CHECK(h.scalar < 1e-12);
  for (uint32_t t = 0; t < m.disc_vocab; ++t)
    if (h.present[t]) CHECK(h.per_token[t] == 0.0);
}

TEST_CASE("conditional entropy: hand-computed 2x2 example") {
  const auto ds = make_dataset(2, 2,
                               {
                                   {{0, 0, 0}, {0, 0, 0}},  // (0,0) x3
                                   {{1, 1, 1}, {1, 1, 1}},  // (1,1) x3
                                   {{1, 0}, {0, 1}},        // (1,0), (0,1)
                               });
  // counts: [[3,1],[1,3]]
  const an::CooccurrenceMatrix m = an::cooccurrence(ds);
  CHECK(m.at(0, 0) == 3);
  CHECK(m.at(0, 1) == 1);
  CHECK(m.at(1, 0) == 1);
  CHECK(m.at(1, 1) == 3);
  const an::EntropyResult h = an::conditional_entropy(m, an::Direction::kGenGivenDisc);
  const double expected = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25));
  CHECK(expected == doctest::Approx(0.5623).epsilon(1e-3));
  CHECK(h.per_token[0] == doctest::Approx(expected).epsilon(1e-12));
  // the scalar is the marginal-weighted mean; both columns weigh 1/2 here
  CHECK(h.scalar == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("conditional entropy: independent streams approach ln V") {
  // 200k positions of independent uniform pairs
  Rng rng(11);
  std::vector<std::pair<std::vector<uint16_t>, std::vector<uint16_t>>> rows;
  const int samples = 3125, ss = 64;
  rows.reserve(samples);
  for (int i = 0; i < samples; ++i) {
    std::vector<uint16_t> g(ss), d(ss);
    for (int j = 0; j < ss; ++j) {
      g[j] = static_cast<uint16_t>(rng.uniform_int(16));
      d[j] = static_cast<uint16_t>(rng.uniform_int(16));
    }
    rows.push_back({g, d});
  }
  const auto ds = make_dataset(16, 16, rows);
  const an::CooccurrenceMatrix m = an::cooccurrence(ds);
  const an::EntropyResult h = an::conditional_entropy(m, an::Direction::kGenGivenDisc);
  CHECK(std::abs(h.scalar - std::log(16.0)) < 0.05);
}

TEST_CASE("entropy range bounds and absent tokens") {
  const auto ds = make_dataset(8, 8, {{{0, 1, 2}, {0, 0, 1}}});
  const an::CooccurrenceMatrix m = an::cooccurrence(ds);
  const an::EntropyResult h = an::conditional_entropy(m, an::Direction::kGenGivenDisc);
  CHECK(h.present_count == 2);  // disc tokens 0 and 1 only
  CHECK(!h.present[5]);
  for (uint32_t t = 0; t < 8; ++t)
    if (h.present[t]) {
      CHECK(h.per_token[t] >= 0.0);
      CHECK(h.per_token[t] <= std::log(8.0) + 1e-12);
    }
}

TEST_CASE("pmi: exact independence gives zeros") {
  // counts = outer product of marginals: c[g][d] = (g+1)*(d+1)
  an::CooccurrenceMatrix m;
  m.gen_vocab = 3;
  m.disc_vocab = 4;
  m.counts.assign(12, 0);
  for (uint32_t g = 0; g < 3; ++g)
    for (uint32_t d = 0; d < 4; ++d) {
      m.counts[g * 4 + d] = (g + 1) * (d + 1);
      m.total += (g + 1) * (d + 1);
    }
  const auto top = an::pmi_top(m, 12);
  REQUIRE(top.size() == 12);
  for (const auto& e : top) CHECK(std::abs(e.pmi) < 1e-12);
}

TEST_CASE("pmi: perfect diagonal pairing gives ln V") {
  an::CooccurrenceMatrix m;
  m.gen_vocab = 5;
  m.disc_vocab = 5;
  m.counts.assign(25, 0);
  for (uint32_t i = 0; i < 5; ++i) m.counts[i * 5 + i] = 7;
  m.total = 35;
  const auto top = an::pmi_top(m, 10);
  REQUIRE(top.size() == 5);  // zero cells are excluded from ranking
  for (const auto& e : top) {
    CHECK(e.gen == e.disc);
    CHECK(e.pmi == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  }
  // ties broken lexicographically
  for (size_t i = 1; i < top.size(); ++i) CHECK(top[i].gen > top[i - 1].gen);
}

TEST_CASE("pmi ranking is descending") {
  Rng rng(13);
  an::CooccurrenceMatrix m;
  m.gen_vocab = 6;
  m.disc_vocab = 6;
  m.counts.assign(36, 0);
  for (auto& c : m.counts) {
    c = rng.uniform_int(20);
    m.total += c;
  }
  const auto top = an::pmi_top(m, 10);
  for (size_t i = 1; i < top.size(); ++i) CHECK(top[i].pmi <= top[i - 1].pmi);
}

TEST_CASE("class curves: point mass, uniform, and synth contrast") {
  // one class, every position the same token
  {
    auto ds = make_dataset(8, 8, {{{5, 5, 5}, {0, 0, 0}}}, true);
    ds.samples[0].label = 0;
    const auto curve = an::class_token_distribution(ds, an::Which::kGen, 4);
    CHECK(curve[0] == doctest::Approx(1.0));
    CHECK(curve[1] == doctest::Approx(0.0));
  }
  // uniform usage over V tokens
  {
    std::vector<uint16_t> g(8);
    for (int i = 0; i < 8; ++i) g[i] = static_cast<uint16_t>(i);
    auto ds = make_dataset(8, 8, {{g, g}}, true);
    ds.samples[0].label = 0;
    const auto curve = an::class_token_distribution(ds, an::Which::kGen, 8);
    for (double x : curve) CHECK(x == doctest::Approx(1.0 / 8).epsilon(1e-12));
  }
  // prototype structure concentrates disc tokens; heavy gen-map noise makes
  // the gen stream class-agnostic and its curve flat, the desk analogue of a
  // texture codebook
  {
    tokenstore::SynthConfig cfg;
    cfg.num_classes = 8;
    cfg.samples_per_class = 100;
    cfg.seq_len = 16;
    cfg.gen_vocab = 64;
    cfg.disc_vocab = 128;
    cfg.class_noise = 0.1;
    cfg.gen_map_noise = 0.9;
    cfg.seed = 17;
    const tokenstore::Dataset ds = tokenstore::synth_dataset(cfg);
    const auto disc_curve = an::class_token_distribution(ds, an::Which::kDisc, 10);
    const auto gen_curve = an::class_token_distribution(ds, an::Which::kGen, 10);
    CHECK(disc_curve[0] > gen_curve[0]);
    // non-increasing, sums to <= 1
    double dsum = 0;
    for (size_t i = 0; i < disc_curve.size(); ++i) {
      if (i > 0) CHECK(disc_curve[i] <= disc_curve[i - 1]);
      dsum += disc_curve[i];
    }
    CHECK(dsum <= 1.0 + 1e-12);
  }
}

TEST_CASE("class curves require labels") {
  const auto ds = make_dataset(4, 4, {{{0, 1}, {2, 3}}});
  CHECK_THROWS_AS(an::class_token_distribution(ds, an::Which::kGen, 4), std::invalid_argument);
}

TEST_CASE("report format is machine-parseable, csv sidecar written") {
  tokenstore::SynthConfig cfg;
  cfg.num_classes = 3;
  cfg.samples_per_class = 30;
  cfg.seq_len = 8;
  cfg.gen_vocab = 8;
  cfg.disc_vocab = 32;
  cfg.gen_map_noise = 0.0;
  cfg.seed = 19;
  const tokenstore::Dataset ds = tokenstore::synth_dataset(cfg);
  const an::Report r = an::analyze(ds, 5, 10);
  CHECK(r.h_gen_given_disc < 1e-12);

  std::ostringstream os;
  an::write_report(r, os);
  const std::string text = os.str();
  CHECK(text.find("[entropy]\n") != std::string::npos);
  CHECK(text.find("[pmi-top]\n") != std::string::npos);
  CHECK(text.find("[class-curves]\n") != std::string::npos);
  CHECK(text.find("H_gen_given_disc=0.000000") != std::string::npos);

  // every non-section line is key=value
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty() || line[0] == '[') continue;
    CHECK(line.find('=') != std::string::npos);
  }

  const std::string csv =
      (std::filesystem::temp_directory_path() / "lease_curve.csv").string();
  an::write_curve_csv(r.gen_curve, csv);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "rank,value");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == static_cast<int>(r.gen_curve.size()));
  std::remove(csv.c_str());
}
