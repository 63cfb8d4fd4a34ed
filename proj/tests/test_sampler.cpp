#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "lease/sampler.hpp"

using namespace lease;
namespace sp = lease::sampler;

namespace {

net::ModelConfig gen_model(int ss = 16, int v = 24) {
  net::ModelConfig mc;
  mc.embed_dim = 16;
  mc.enc_layers = 2;
  mc.dec_layers = 1;
  mc.heads = 2;
  mc.mlp_ratio = 2.0f;
  mc.seq_len = ss;
  mc.gen_vocab = v;
  mc.contrast_dim = 8;
  return mc;
}

tokenstore::Dataset proto_synth(uint32_t classes, uint32_t per_class, uint32_t ss, uint32_t vgen,
                                uint32_t kdisc, uint64_t seed) {
  tokenstore::SynthConfig cfg;
  cfg.num_classes = classes;
  cfg.samples_per_class = per_class;
  cfg.seq_len = ss;
  cfg.gen_vocab = vgen;
  cfg.disc_vocab = kdisc;
  cfg.class_noise = 0.0;
  cfg.gen_map_noise = 0.0;
  cfg.seed = seed;
  return tokenstore::synth_dataset(cfg);
}

codebook::Codebook rand_codebook(int k, int d, uint64_t seed) {
  Rng rng(seed);
  codebook::Codebook raw;
  raw.centroids = Matf(k, d);
  for (float& x : raw.centroids.v) x = static_cast<float>(rng.normal());
  return codebook::normalize(raw);
}

std::map<uint16_t, double> token_hist(const std::vector<uint16_t>& seq) {
  std::map<uint16_t, double> h;
  for (uint16_t t : seq) h[t] += 1.0 / seq.size();
  return h;
}

double tv_distance(const std::map<uint16_t, double>& a, const std::map<uint16_t, double>& b) {
  double tv = 0;
  std::map<uint16_t, double> merged = a;
  for (const auto& [k, v] : b) merged[k] += 0;  // ensure keys exist
  for (const auto& [k, unused] : merged) {
    const double pa = a.count(k) ? a.at(k) : 0.0;
    const double pb = b.count(k) ? b.at(k) : 0.0;
    tv += std::abs(pa - pb);
  }
  return tv / 2.0;
}

}  // namespace

TEST_CASE("cosine keep counts: endpoints, monotonicity, exact formula") {
  for (int ss : {16, 64}) {
    for (int steps : {1, 4, 8}) {
      int prev = 0;
      for (int s = 1; s <= steps; ++s) {
        const int kc = sp::keep_count(ss, steps, s);
        const int expect = static_cast<int>(
            std::ceil(ss * std::cos(M_PI / 2.0 * (steps - s) / static_cast<double>(steps))));
        CHECK(kc == expect);
        CHECK(kc >= prev);
        prev = kc;
      }
      CHECK(sp::keep_count(ss, steps, steps) == ss);
      CHECK(sp::keep_count(ss, steps, 0) == 0);
    }
  }
}

TEST_CASE("generation: schedule adherence, no resampling, vocabulary contract") {
  const net::ModelConfig mc = gen_model();
  const net::Params<float> p = net::init_params(mc, 51);
  for (int steps : {1, 4, 8}) {
    sp::DecodeSchedule sched;
    sched.steps = steps;
    sched.temperature = 1.0;
    Rng rng(7);
    sp::GenerationTrace trace;
    const std::vector<uint16_t> out = sp::generate_unconditional(p, sched, rng, &trace);
    REQUIRE(out.size() == static_cast<size_t>(mc.seq_len));
    for (uint16_t t : out) CHECK(t < mc.gen_vocab);

    REQUIRE(trace.fixed_after_step.size() == static_cast<size_t>(steps));
    for (int s = 1; s <= steps; ++s) {
      int fixed = 0;
      for (uint8_t f : trace.fixed_after_step[s - 1]) fixed += f;
      CHECK(fixed == sp::keep_count(mc.seq_len, steps, s));
      // once fixed, the token never changes
      if (s > 1) {
        for (int j = 0; j < mc.seq_len; ++j) {
          if (trace.fixed_after_step[s - 2][j]) {
            CHECK(trace.fixed_after_step[s - 1][j] == 1);
            CHECK(trace.tokens_after_step[s - 1][j] == trace.tokens_after_step[s - 2][j]);
          }
        }
      }
    }
    // nothing left masked after the last step
    for (int j = 0; j < mc.seq_len; ++j)
      CHECK(trace.fixed_after_step[steps - 1][j] == 1);
  }
}

TEST_CASE("generation: temperature zero is deterministic") {
  const net::ModelConfig mc = gen_model();
  const net::Params<float> p = net::init_params(mc, 52);
  sp::DecodeSchedule sched;
  sched.steps = 6;
  sched.temperature = 0.0;
  Rng r1(1), r2(999);
  const auto a = sp::generate_unconditional(p, sched, r1);
  const auto b = sp::generate_unconditional(p, sched, r2);
  CHECK(a == b);
}

TEST_CASE("generated batches serialize as gen-only datasets") {
  const net::ModelConfig mc = gen_model();
  const net::Params<float> p = net::init_params(mc, 53);
  sp::DecodeSchedule sched;
  sched.steps = 4;
  sched.temperature = 0.8;
  Rng rng(3);
  std::vector<std::vector<uint16_t>> seqs;
  for (int i = 0; i < 3; ++i) seqs.push_back(sp::generate_unconditional(p, sched, rng));
  const tokenstore::Dataset ds = sp::tokens_to_dataset(seqs, {}, mc.gen_vocab);
  CHECK(ds.header.gen_only);
  tokenstore::validate(ds);
}

TEST_CASE("conditional fine-tune: frozen encoder, learnable class structure") {
  // Two classes with disjoint token sets: class 0 uses gen tokens 0..7 and
  // disc tokens 0..7, class 1 uses 8..15 of each. Every sample of a class is
  // the same exact sequence (the delta=0, eps=0 regime).
  const uint32_t classes = 2, ss = 16, vgen = 16, kdisc = 16;
  const int per_class = 40;
  tokenstore::Dataset ds;
  ds.header.num_samples = classes * per_class;
  ds.header.seq_len = ss;
  ds.header.gen_vocab = vgen;
  ds.header.disc_vocab = kdisc;
  ds.header.has_labels = true;
  for (uint32_t c = 0; c < classes; ++c)
    for (int s = 0; s < per_class; ++s) {
      tokenstore::TokenPairSample sample;
      sample.label = static_cast<int32_t>(c);
      sample.gen.resize(ss);
      sample.disc.resize(ss);
      for (uint32_t j = 0; j < ss; ++j) {
        sample.gen[j] = static_cast<uint16_t>(8 * c + j % 8);
        sample.disc[j] = static_cast<uint16_t>(8 * c + (j + 3) % 8);
      }
      ds.samples.push_back(sample);
    }

  const codebook::Codebook cb = rand_codebook(kdisc, 8, 10);
  const codebook::NeighborTable table = codebook::build_neighbor_table(cb, 5);

  const net::ModelConfig mc = gen_model(ss, vgen);
  trainer::TrainConfig tc;
  tc.batch_size = 40;
  tc.warmup_epochs = 1;
  tc.total_epochs = 4;
  tc.base_lr = 2e-3;
  const trainer::TrainResult pre = trainer::train(ds, cb, table, mc, tc, nullptr);

  const uint64_t hash_before = net::encoder_hash(pre.params);

  sp::FinetuneConfig fc;
  fc.batch_size = 40;
  fc.total_epochs = 60;
  fc.base_lr = 5e-3;
  fc.seed = 11;
  const net::Params<float> cond =
      sp::finetune_conditional_decoder(pre.params, ds, cb, classes, fc);

  CHECK(net::encoder_hash(cond) == hash_before);
  CHECK(cond.cfg.class_count == static_cast<int>(classes));
  CHECK(cond.cfg.cond_codebook_k == static_cast<int>(kdisc));

  // conditional generations steer toward the class prototypes
  sp::DecodeSchedule sched;
  sched.steps = 4;
  sched.temperature = 0.0;

  std::vector<std::map<uint16_t, double>> train_hist(classes);
  for (uint32_t c = 0; c < classes; ++c)
    train_hist[c] = token_hist(ds.samples[c * per_class].gen);

  Rng grng(13);
  const auto uncond = sp::generate_unconditional(cond, sched, grng);
  const auto uncond_hist = token_hist(uncond);

  double tv_cond = 0, tv_uncond = 0;
  int own_tokens = 0, other_tokens = 0;
  for (uint32_t c = 0; c < classes; ++c) {
    Rng crng(100 + c);
    const auto gen_c = sp::generate_conditional(cond, static_cast<int>(c), sched, crng);
    for (uint16_t t : gen_c) CHECK(t < vgen);
    tv_cond += tv_distance(token_hist(gen_c), train_hist[c]);
    tv_uncond += tv_distance(uncond_hist, train_hist[c]);
    // disjoint vocabulary halves: membership alone identifies the class
    for (uint16_t t : gen_c) {
      own_tokens += (t / 8) == c;
      other_tokens += (t / 8) != c;
    }
  }
  CHECK(tv_cond / classes < tv_uncond / classes);
  CHECK(own_tokens > other_tokens);
}

TEST_CASE("conditional generation rejects bad class ids and plain checkpoints") {
  const net::ModelConfig mc = gen_model();
  const net::Params<float> p = net::init_params(mc, 54);
  sp::DecodeSchedule sched;
  Rng rng(1);
  CHECK_THROWS_AS(sp::generate_conditional(p, 0, sched, rng), DataError);
}

TEST_CASE("fine-tune requires labels") {
  tokenstore::Dataset ds = proto_synth(2, 10, 16, 24, 48, 1);
  ds.header.has_labels = false;
  const codebook::Codebook cb = rand_codebook(48, 8, 2);
  const net::ModelConfig mc = gen_model();
  const net::Params<float> p = net::init_params(mc, 55);
  sp::FinetuneConfig fc;
  fc.total_epochs = 1;
  CHECK_THROWS_AS(sp::finetune_conditional_decoder(p, ds, cb, 2, fc), DataError);
}

TEST_CASE("schedule validation") {
  sp::DecodeSchedule s;
  s.steps = 0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.steps = 4;
  s.temperature = -1.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}
