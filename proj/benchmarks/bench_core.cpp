#include <benchmark/benchmark.h>

#include "lease/codebook.hpp"
#include "lease/masking.hpp"
#include "lease/net.hpp"
#include "lease/objectives.hpp"

using namespace lease;

namespace {

net::ModelConfig desk_config(int ss) {
  net::ModelConfig mc;
  mc.embed_dim = 64;
  mc.enc_layers = 4;
  mc.dec_layers = 2;
  mc.heads = 4;
  mc.seq_len = ss;
  mc.gen_vocab = 64;
  mc.contrast_dim = 64;
  return mc;
}

codebook::Codebook unit_codebook(int k, int d) {
  Rng rng(1);
  codebook::Codebook raw;
  raw.centroids = Matf(k, d);
  for (float& x : raw.centroids.v) x = static_cast<float>(rng.normal());
  return codebook::normalize(raw);
}

void BM_EncoderForward(benchmark::State& state) {
  const int ss = static_cast<int>(state.range(0));
  const net::ModelConfig mc = desk_config(ss);
  const net::Params<float> p = net::init_params(mc, 1);
  std::vector<int> tokens(1 + ss, 3);
  tokens[0] = mc.cls_id();
  std::vector<int> pos(ss);
  for (int i = 0; i < ss; ++i) pos[i] = i;
  for (auto _ : state) {
    const Matf out = net::encode<float>(p, tokens, pos, nullptr, nullptr);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_EncoderForward)->Arg(16)->Arg(64);

void BM_SampleForwardBackward(benchmark::State& state) {
  const int ss = static_cast<int>(state.range(0));
  const net::ModelConfig mc = desk_config(ss);
  const net::Params<float> p = net::init_params(mc, 1);
  const codebook::Codebook cb = unit_codebook(128, mc.contrast_dim);
  const codebook::NeighborTable table = codebook::build_neighbor_table(cb, 5);
  Rng rng(2);
  std::vector<uint16_t> gen(ss), disc(ss);
  for (auto& t : gen) t = static_cast<uint16_t>(rng.uniform_int(mc.gen_vocab));
  for (auto& t : disc) t = static_cast<uint16_t>(rng.uniform_int(128));
  const masking::MaskPlan plan = masking::build_plan(ss, 0.75, rng);
  net::Params<float> grads = net::zeros_like(p);
  for (auto _ : state) {
    net::SampleTrace<float> tr;
    net::forward_sample(p, gen, plan, -1, false, nullptr, tr);
    Matf dlogits, dz;
    objectives::recon_loss(tr.logits, gen, plan.masked, 0.1, &dlogits);
    std::vector<uint16_t> zdisc;
    for (int row : tr.contrast_rows) zdisc.push_back(disc[tr.pos_ids[row - 1]]);
    objectives::contrast_loss(tr.z, zdisc, cb, table, 0.1, 0.1, &dz);
    net::backward_sample(p, tr, dlogits, dz, false, grads);
    benchmark::DoNotOptimize(grads.token_embed.data());
  }
}
BENCHMARK(BM_SampleForwardBackward)->Arg(16)->Arg(64);

void BM_KMeansAssign(benchmark::State& state) {
  const int n = 4096, d = 32, k = static_cast<int>(state.range(0));
  Rng rng(3);
  Matf pts(n, d);
  for (float& x : pts.v) x = static_cast<float>(rng.normal());
  for (auto _ : state) {
    const codebook::KMeansResult r = codebook::kmeans_fit(pts, k, 2, 1);
    benchmark::DoNotOptimize(r.inertia);
  }
}
BENCHMARK(BM_KMeansAssign)->Arg(64)->Arg(256);

void BM_ContrastLoss(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0)), d = 64, n = 8;
  const codebook::Codebook cb = unit_codebook(k, d);
  const codebook::NeighborTable table = codebook::build_neighbor_table(cb, 5);
  Rng rng(4);
  Matf z(n, d);
  std::vector<uint16_t> disc(n);
  for (int r = 0; r < n; ++r) {
    double n2 = 0;
    for (int j = 0; j < d; ++j) {
      z.at(r, j) = static_cast<float>(rng.normal());
      n2 += static_cast<double>(z.at(r, j)) * z.at(r, j);
    }
    for (int j = 0; j < d; ++j) z.at(r, j) /= static_cast<float>(std::sqrt(n2));
    disc[r] = static_cast<uint16_t>(rng.uniform_int(k));
  }
  Matf dz;
  for (auto _ : state) {
    const auto r = objectives::contrast_loss(z, disc, cb, table, 0.1, 0.1, &dz);
    benchmark::DoNotOptimize(r.loss);
  }
}
BENCHMARK(BM_ContrastLoss)->Arg(128)->Arg(1024);

void BM_BuildPlan(benchmark::State& state) {
  Rng rng(5);
  masking::MaskRatioConfig cfg;
  for (auto _ : state) {
    const double ratio = masking::sample_ratio(cfg, rng);
    const masking::MaskPlan plan = masking::build_plan(256, ratio, rng);
    benchmark::DoNotOptimize(plan.retained.data());
  }
}
BENCHMARK(BM_BuildPlan);

}  // namespace

BENCHMARK_MAIN();
