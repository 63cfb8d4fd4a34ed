// lease: token-space self-supervised training toolkit.
//
// Subcommands cover the full pipeline: synthetic dataset generation,
// codebook construction, token precompute, pretraining, decoder-only
// conditional fine-tuning, evaluation probes, iterative generation, and
// codebook analytics. Every run writes a JSON manifest of its resolved
// configuration before any long computation starts.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <json.hpp>

#include "lease/analysis.hpp"
#include "lease/codebook.hpp"
#include "lease/io.hpp"
#include "lease/masking.hpp"
#include "lease/net.hpp"
#include "lease/objectives.hpp"
#include "lease/sampler.hpp"
#include "lease/tokenstore.hpp"
#include "lease/trainer.hpp"

using json = nlohmann::json;
using namespace lease;

namespace {

constexpr const char* kArtifactVersion = "1.0.0";

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("LEASE_THREADS")) {
    const int value = std::atoi(env);
    if (value > 0) return value;
  }
  return 1;
}

std::string derived_path(const std::string& base, const std::string& new_ext) {
  const size_t dot = base.find_last_of('.');
  const size_t slash = base.find_last_of('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return base + new_ext;
  return base.substr(0, dot) + new_ext;
}

void write_manifest(const std::string& subcommand, const json& config,
                    const std::string& explicit_path, const std::string& primary_output) {
  std::string path = explicit_path;
  if (path.empty())
    path = primary_output.empty() ? "lease-" + subcommand + ".manifest.json"
                                  : primary_output + ".manifest.json";
  json m;
  m["subcommand"] = subcommand;
  m["artifact_version"] = kArtifactVersion;
  m["config"] = config;
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest: " + path);
  os << m.dump(2) << "\n";
}

codebook::Codebook load_normalized_codebook(const std::string& path) {
  codebook::Codebook cb = codebook::read_codebook(path);
  if (!cb.normalized) cb = codebook::normalize(cb);
  return cb;
}

struct TrainCommon {
  std::string preset = "desk";
  int embed_dim = -1, enc_layers = -1, dec_layers = -1, heads = -1;
  double mlp_ratio = -1.0, dropout = -1.0;
  double lr = -1.0, wd = -1.0, clip = -1.0, smoothing = -1.0;
  double lambda = -1.0, tau = -1.0, alpha = -1.0;
  int ksel = -1, batch = -1, warmup = -1, epochs = -1, run_epochs = -1, log_every = -1;
};

void apply_preset(const std::string& preset, net::ModelConfig& mc, trainer::TrainConfig& tc) {
  if (preset == "desk") {
    mc.embed_dim = 64;
    mc.enc_layers = 4;
    mc.dec_layers = 2;
    mc.heads = 4;
    mc.mlp_ratio = 4.0f;
    mc.dropout_p = 0.0f;
    tc.base_lr = 1.5e-3;
    tc.batch_size = 64;
    tc.warmup_epochs = 2;
    tc.total_epochs = 30;
  } else if (preset == "paper") {
    // ViT-Base geometry with the published pretraining settings. Not a
    // desk-scale target; runnable only on matching hardware and data.
    mc.embed_dim = 768;
    mc.enc_layers = 12;
    mc.dec_layers = 8;
    mc.heads = 12;
    mc.mlp_ratio = 4.0f;
    mc.dropout_p = 0.5f;
    tc.base_lr = 1.5e-4;
    tc.batch_size = 4096;
    tc.warmup_epochs = 40;
    tc.total_epochs = 1600;
  } else {
    throw CLI::ValidationError("--preset", "unknown preset: " + preset);
  }
  tc.beta1 = 0.9;
  tc.beta2 = 0.95;
  tc.weight_decay = 0.05;
  tc.grad_clip = 3.0;
  tc.label_smoothing = 0.1;
  tc.lambda = 0.1;
  tc.tau = 0.1;
  tc.alpha = 0.1;
  tc.k_sel = 5;
}

void apply_overrides(const TrainCommon& o, net::ModelConfig& mc, trainer::TrainConfig& tc) {
  if (o.embed_dim > 0) mc.embed_dim = o.embed_dim;
  if (o.enc_layers > 0) mc.enc_layers = o.enc_layers;
  if (o.dec_layers > 0) mc.dec_layers = o.dec_layers;
  if (o.heads > 0) mc.heads = o.heads;
  if (o.mlp_ratio > 0) mc.mlp_ratio = static_cast<float>(o.mlp_ratio);
  if (o.dropout >= 0) mc.dropout_p = static_cast<float>(o.dropout);
  if (o.lr > 0) tc.base_lr = o.lr;
  if (o.wd >= 0) tc.weight_decay = o.wd;
  if (o.clip > 0) tc.grad_clip = o.clip;
  if (o.smoothing >= 0) tc.label_smoothing = o.smoothing;
  if (o.lambda >= 0) tc.lambda = o.lambda;
  if (o.tau > 0) tc.tau = o.tau;
  if (o.alpha > 0) tc.alpha = o.alpha;
  if (o.ksel > 0) tc.k_sel = o.ksel;
  if (o.batch > 0) tc.batch_size = o.batch;
  if (o.warmup >= 0) tc.warmup_epochs = o.warmup;
  if (o.epochs > 0) tc.total_epochs = o.epochs;
  if (o.run_epochs > 0) tc.run_epochs = o.run_epochs;
  if (o.log_every > 0) tc.log_every = o.log_every;
}

json model_config_json(const net::ModelConfig& mc) {
  return json{{"embed_dim", mc.embed_dim},       {"enc_layers", mc.enc_layers},
              {"dec_layers", mc.dec_layers},     {"heads", mc.heads},
              {"mlp_ratio", mc.mlp_ratio},       {"seq_len", mc.seq_len},
              {"gen_vocab", mc.gen_vocab},       {"contrast_dim", mc.contrast_dim},
              {"dropout_p", mc.dropout_p},       {"class_count", mc.class_count},
              {"cond_codebook_k", mc.cond_codebook_k}};
}

json train_config_json(const trainer::TrainConfig& tc) {
  return json{{"base_lr", tc.base_lr},
              {"beta1", tc.beta1},
              {"beta2", tc.beta2},
              {"weight_decay", tc.weight_decay},
              {"grad_clip", tc.grad_clip},
              {"label_smoothing", tc.label_smoothing},
              {"lambda", tc.lambda},
              {"tau", tc.tau},
              {"alpha", tc.alpha},
              {"k_sel", tc.k_sel},
              {"batch_size", tc.batch_size},
              {"warmup_epochs", tc.warmup_epochs},
              {"total_epochs", tc.total_epochs},
              {"run_epochs", tc.run_epochs},
              {"seed", tc.seed},
              {"threads", tc.threads},
              {"log_every", tc.log_every}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lease: token-space self-supervised training toolkit"};
  app.require_subcommand(1);

  std::string manifest_path;
  app.add_option("--manifest", manifest_path, "manifest output path override");
  int threads_flag = 0;
  app.add_option("--threads", threads_flag,
                 "worker threads (default: LEASE_THREADS env or 1; 1 is bit-reproducible)");

  // ---- synth -------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic token dataset");
  tokenstore::SynthConfig sc;
  std::string synth_out, synth_cb_out;
  int synth_dim = 64, synth_ksel = 5;
  synth->add_option("--classes", sc.num_classes, "number of classes")->default_val(10);
  synth->add_option("--per-class", sc.samples_per_class, "samples per class")->default_val(200);
  synth->add_option("--ss", sc.seq_len, "sequence length")->default_val(16);
  synth->add_option("--vgen", sc.gen_vocab, "gen vocabulary size")->default_val(64);
  synth->add_option("--kdisc", sc.disc_vocab, "disc vocabulary size")->default_val(128);
  synth->add_option("--eps", sc.class_noise, "per-position prototype noise")
      ->default_val(0.1)
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--delta", sc.gen_map_noise, "per-position gen map noise")
      ->default_val(0.05)
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--seed", sc.seed, "rng seed")->default_val(0);
  synth->add_option("--out", synth_out, "output .lstk path")->required();
  synth->add_option("--codebook-out", synth_cb_out,
                    "also emit a synthetic centroid codebook (.lscb) and neighbor table");
  synth->add_option("--dim", synth_dim, "synthetic codebook dimension")->default_val(64);
  synth->add_option("--ksel", synth_ksel, "neighbors per centroid for the emitted table")
      ->default_val(5);

  // ---- kmeans ------------------------------------------------------------
  auto* km = app.add_subcommand("kmeans", "build a codebook from a feature dump");
  std::string km_features, km_out;
  int km_k = 128, km_iters = 50, km_ksel = 5;
  uint64_t km_seed = 0;
  km->add_option("--features", km_features, "input .lsft feature dump")->required();
  km->add_option("--k", km_k, "centroid count")->default_val(128);
  km->add_option("--iters", km_iters, "max Lloyd iterations")->default_val(50);
  km->add_option("--ksel", km_ksel, "neighbors per centroid")->default_val(5);
  km->add_option("--seed", km_seed, "rng seed")->default_val(0);
  km->add_option("--out", km_out, "output .lscb path (a .lsnn lands next to it)")->required();

  // ---- precompute ----------------------------------------------------------
  auto* pre = app.add_subcommand(
      "precompute", "assign disc tokens from a feature dump, aligned with existing gen tokens");
  std::string pre_features, pre_gen, pre_cb, pre_out;
  pre->add_option("--features", pre_features, "input .lsft feature dump")->required();
  pre->add_option("--gen", pre_gen, "dataset carrying the gen tokens (.lstk)")->required();
  pre->add_option("--codebook", pre_cb, "codebook .lscb")->required();
  pre->add_option("--out", pre_out, "output .lstk path")->required();

  // ---- train ---------------------------------------------------------------
  auto* train = app.add_subcommand("train", "pretrain on a paired token dataset");
  std::string train_data, train_cb, train_nn, train_out, train_log, train_resume;
  TrainCommon tco;
  uint64_t train_seed = 0;
  train->add_option("--data", train_data, "training dataset .lstk")->required();
  train->add_option("--codebook", train_cb, "codebook .lscb")->required();
  train->add_option("--neighbors", train_nn, "neighbor table .lsnn (default: derived)");
  train->add_option("--out", train_out, "checkpoint output path")->required();
  train->add_option("--log", train_log, "metrics log path");
  train->add_option("--resume", train_resume, "training checkpoint to continue from");
  train->add_option("--preset", tco.preset, "desk | paper")->default_val("desk");
  train->add_option("--seed", train_seed, "rng seed")->default_val(0);
  train->add_option("--embed", tco.embed_dim, "embedding dimension");
  train->add_option("--enc-layers", tco.enc_layers, "encoder blocks");
  train->add_option("--dec-layers", tco.dec_layers, "decoder blocks");
  train->add_option("--heads", tco.heads, "attention heads");
  train->add_option("--mlp-ratio", tco.mlp_ratio, "MLP hidden ratio");
  train->add_option("--dropout", tco.dropout, "dropout probability");
  train->add_option("--lr", tco.lr, "base learning rate");
  train->add_option("--wd", tco.wd, "weight decay");
  train->add_option("--grad-clip", tco.clip, "global gradient norm clip");
  train->add_option("--label-smoothing", tco.smoothing, "reconstruction label smoothing");
  train->add_option("--lambda", tco.lambda, "contrast loss weight");
  train->add_option("--tau", tco.tau, "neighbor weighting temperature");
  train->add_option("--alpha", tco.alpha, "contrast softmax temperature");
  train->add_option("--ksel", tco.ksel, "neighbors per centroid");
  train->add_option("--batch", tco.batch, "batch size");
  train->add_option("--warmup", tco.warmup, "warmup epochs");
  train->add_option("--epochs", tco.epochs, "total epochs (schedule span)");
  train->add_option("--run-epochs", tco.run_epochs, "epochs to execute this run");
  train->add_option("--log-every", tco.log_every, "steps between metric records");

  // ---- finetune --------------------------------------------------------------
  auto* ft = app.add_subcommand("finetune", "conditional decoder-only fine-tune");
  std::string ft_ckpt, ft_data, ft_cb, ft_out, ft_log;
  int ft_classes = 0, ft_epochs = 20, ft_batch = 64, ft_warmup = 0;
  double ft_lr = 1.5e-3;
  uint64_t ft_seed = 0;
  ft->add_option("--ckpt", ft_ckpt, "pretrained checkpoint")->required();
  ft->add_option("--data", ft_data, "labeled dataset .lstk")->required();
  ft->add_option("--codebook", ft_cb, "codebook .lscb (centroid tail)")->required();
  ft->add_option("--classes", ft_classes, "class count")->required();
  ft->add_option("--epochs", ft_epochs, "fine-tune epochs")->default_val(20);
  ft->add_option("--batch", ft_batch, "batch size")->default_val(64);
  ft->add_option("--warmup", ft_warmup, "warmup epochs")->default_val(0);
  ft->add_option("--lr", ft_lr, "base learning rate")->default_val(1.5e-3);
  ft->add_option("--seed", ft_seed, "rng seed")->default_val(0);
  ft->add_option("--out", ft_out, "conditional checkpoint output")->required();
  ft->add_option("--log", ft_log, "metrics log path");

  // ---- probe / knn -----------------------------------------------------------
  auto* probe = app.add_subcommand("probe", "linear probe on frozen encoder features");
  auto* knn = app.add_subcommand("knn", "k-NN evaluation on frozen encoder features");
  std::string eval_ckpt, eval_data, eval_out, eval_pooling = "mean";
  int probe_epochs = 100, knn_k = 5;
  double probe_lr = 0.1, eval_frac = 0.5;
  uint64_t eval_seed = 0;
  for (CLI::App* cmd : {probe, knn}) {
    cmd->add_option("--ckpt", eval_ckpt, "checkpoint")->required();
    cmd->add_option("--data", eval_data, "labeled dataset .lstk")->required();
    cmd->add_option("--pooling", eval_pooling, "cls | mean")->default_val("mean");
    cmd->add_option("--train-frac", eval_frac, "train split fraction")->default_val(0.5);
    cmd->add_option("--seed", eval_seed, "split seed")->default_val(0);
    cmd->add_option("--out", eval_out, "report output path");
  }
  probe->add_option("--epochs", probe_epochs, "probe epochs")->default_val(100);
  probe->add_option("--lr", probe_lr, "probe learning rate")->default_val(0.1);
  knn->add_option("--k", knn_k, "neighbor count")->default_val(5);

  // ---- generate ----------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "iterative masked generation in token space");
  std::string gen_ckpt, gen_out;
  int gen_steps = 8, gen_n = 16, gen_class = -1;
  double gen_temp = 1.0;
  uint64_t gen_seed = 0;
  gen->add_option("--ckpt", gen_ckpt, "checkpoint")->required();
  gen->add_option("--steps", gen_steps, "decoding steps")->default_val(8);
  gen->add_option("--temp", gen_temp, "sampling temperature (0 = greedy)")->default_val(1.0);
  gen->add_option("--n", gen_n, "number of sequences")->default_val(16);
  gen->add_option("--class", gen_class, "class id (conditional checkpoints only)");
  gen->add_option("--seed", gen_seed, "rng seed")->default_val(0);
  gen->add_option("--out", gen_out, "output .lstk path")->required();

  // ---- analyze -----------------------------------------------------------------
  auto* an = app.add_subcommand("analyze", "codebook relationship analytics");
  std::string an_data, an_out;
  int an_pairs = 20, an_topk = 20;
  bool an_csv = false;
  an->add_option("--data", an_data, "dataset .lstk")->required();
  an->add_option("--out", an_out, "report output path")->required();
  an->add_option("--top-pairs", an_pairs, "PMI pairs to report")->default_val(20);
  an->add_option("--top-k", an_topk, "class curve length")->default_val(20);
  an->add_flag("--csv", an_csv, "emit class-curve CSV sidecars");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const int threads = resolve_threads(threads_flag);

  try {
    if (*synth) {
      json cfg{{"classes", sc.num_classes}, {"per_class", sc.samples_per_class},
               {"ss", sc.seq_len},          {"vgen", sc.gen_vocab},
               {"kdisc", sc.disc_vocab},    {"eps", sc.class_noise},
               {"delta", sc.gen_map_noise}, {"seed", sc.seed},
               {"out", synth_out},          {"codebook_out", synth_cb_out},
               {"dim", synth_dim},          {"ksel", synth_ksel}};
      write_manifest("synth", cfg, manifest_path, synth_out);
      sc.validate();
      const tokenstore::Dataset ds = tokenstore::synth_dataset(sc);
      tokenstore::write_dataset(ds, synth_out);
      std::cout << "wrote " << synth_out << " (" << ds.size() << " samples)\n";
      if (!synth_cb_out.empty()) {
        // Synthetic centroids for the synthetic disc vocabulary: random unit
        // vectors, one per disc token.
        Rng rng(mix_seed(sc.seed, 0x434F4445ull));
        codebook::Codebook raw;
        raw.centroids = Matf(static_cast<int>(sc.disc_vocab), synth_dim);
        for (float& x : raw.centroids.v) x = static_cast<float>(rng.normal());
        const codebook::Codebook cb = codebook::normalize(raw);
        codebook::write_codebook(cb, synth_cb_out);
        const codebook::NeighborTable table = codebook::build_neighbor_table(cb, synth_ksel);
        const std::string nn_path = derived_path(synth_cb_out, ".lsnn");
        codebook::write_neighbor_table(table, nn_path);
        std::cout << "wrote " << synth_cb_out << " and " << nn_path << "\n";
      }
    } else if (*km) {
      json cfg{{"features", km_features}, {"k", km_k},       {"iters", km_iters},
               {"ksel", km_ksel},         {"seed", km_seed}, {"out", km_out}};
      write_manifest("kmeans", cfg, manifest_path, km_out);
      const tokenstore::FeatureDump fd = tokenstore::read_features(km_features);
      Matf points(static_cast<int>(fd.num_samples * fd.seq_len), static_cast<int>(fd.dim));
      std::copy(fd.data.begin(), fd.data.end(), points.v.begin());
      const codebook::KMeansResult result = codebook::kmeans_fit(points, km_k, km_iters,
                                                                 km_seed, threads);
      codebook::write_codebook(result.codebook, km_out);
      const codebook::Codebook normalized = codebook::normalize(result.codebook);
      const codebook::NeighborTable table = codebook::build_neighbor_table(normalized, km_ksel);
      const std::string nn_path = derived_path(km_out, ".lsnn");
      codebook::write_neighbor_table(table, nn_path);
      std::cout << "k-means: " << result.iterations << " iterations, inertia "
                << result.inertia << "\n";
      std::cout << "wrote " << km_out << " and " << nn_path << "\n";
    } else if (*pre) {
      json cfg{{"features", pre_features},
               {"gen", pre_gen},
               {"codebook", pre_cb},
               {"out", pre_out}};
      write_manifest("precompute", cfg, manifest_path, pre_out);
      const tokenstore::FeatureDump fd = tokenstore::read_features(pre_features);
      tokenstore::Dataset ds = tokenstore::read_dataset(pre_gen);
      if (fd.num_samples != ds.header.num_samples || fd.seq_len != ds.header.seq_len)
        throw DataError("feature dump and gen dataset shapes do not match");
      const codebook::Codebook cb = codebook::read_codebook(pre_cb);
      const auto disc = tokenstore::assign_disc_tokens(fd, cb, threads);
      for (size_t i = 0; i < ds.samples.size(); ++i) ds.samples[i].disc = disc[i];
      ds.header.disc_vocab = static_cast<uint32_t>(cb.k());
      ds.header.gen_only = false;
      tokenstore::write_dataset(ds, pre_out);
      std::cout << "wrote " << pre_out << "\n";
    } else if (*train) {
      const tokenstore::Dataset ds = tokenstore::read_dataset(train_data);
      const codebook::Codebook cb = load_normalized_codebook(train_cb);

      net::ModelConfig mc;
      trainer::TrainConfig tc;
      apply_preset(tco.preset, mc, tc);
      apply_overrides(tco, mc, tc);
      mc.seq_len = static_cast<int>(ds.seq_len());
      mc.gen_vocab = static_cast<int>(ds.gen_vocab());
      mc.contrast_dim = cb.dim();
      tc.seed = train_seed;
      tc.threads = threads;

      codebook::NeighborTable table;
      if (!train_nn.empty()) {
        table = codebook::read_neighbor_table(train_nn);
      } else {
        const std::string derived = derived_path(train_cb, ".lsnn");
        if (io::file_exists(derived)) table = codebook::read_neighbor_table(derived);
        if (table.k() != cb.k() || table.k_sel != tc.k_sel)
          table = codebook::build_neighbor_table(cb, tc.k_sel);
      }

      json cfg{{"data", train_data},   {"codebook", train_cb}, {"neighbors", train_nn},
               {"out", train_out},     {"log", train_log},     {"resume", train_resume},
               {"preset", tco.preset}, {"model", model_config_json(mc)},
               {"train", train_config_json(tc)}};
      write_manifest("train", cfg, manifest_path, train_out);

      std::optional<trainer::ResumePoint> resume;
      if (!train_resume.empty()) {
        resume = trainer::load_train_checkpoint(train_resume);
        mc = resume->params.cfg;
      }

      std::ofstream log_stream;
      std::ostream* metrics = nullptr;
      if (!train_log.empty()) {
        log_stream.open(train_log);
        if (!log_stream) throw DataError("cannot open metrics log: " + train_log);
        metrics = &log_stream;
      }
      const trainer::TrainResult result =
          trainer::train(ds, cb, table, mc, tc, metrics, resume ? &*resume : nullptr);
      trainer::save_train_checkpoint(train_out, result.params, result.opt, result.next_epoch,
                                     result.final_step);
      std::cout << "trained " << result.epochs.size() << " epochs; final total loss "
                << (result.epochs.empty() ? 0.0 : result.epochs.back().total) << "\n";
      std::cout << "wrote " << train_out << "\n";
    } else if (*ft) {
      json cfg{{"ckpt", ft_ckpt},     {"data", ft_data},   {"codebook", ft_cb},
               {"classes", ft_classes}, {"epochs", ft_epochs}, {"batch", ft_batch},
               {"warmup", ft_warmup},   {"lr", ft_lr},         {"seed", ft_seed},
               {"out", ft_out}};
      write_manifest("finetune", cfg, manifest_path, ft_out);
      const net::Checkpoint ck = net::load_checkpoint(ft_ckpt);
      const tokenstore::Dataset ds = tokenstore::read_dataset(ft_data);
      const codebook::Codebook cb = load_normalized_codebook(ft_cb);
      sampler::FinetuneConfig fc;
      fc.base_lr = ft_lr;
      fc.batch_size = ft_batch;
      fc.warmup_epochs = ft_warmup;
      fc.total_epochs = ft_epochs;
      fc.seed = ft_seed;
      fc.threads = threads;
      std::ofstream log_stream;
      std::ostream* metrics = nullptr;
      if (!ft_log.empty()) {
        log_stream.open(ft_log);
        if (!log_stream) throw DataError("cannot open metrics log: " + ft_log);
        metrics = &log_stream;
      }
      const net::Params<float> cond =
          sampler::finetune_conditional_decoder(ck.params, ds, cb, ft_classes, fc, metrics);
      net::save_checkpoint(cond, {}, ft_out);
      std::cout << "wrote " << ft_out << "\n";
    } else if (*probe || *knn) {
      const bool is_probe = static_cast<bool>(*probe);
      const char* name = is_probe ? "probe" : "knn";
      json cfg{{"ckpt", eval_ckpt},       {"data", eval_data}, {"pooling", eval_pooling},
               {"train_frac", eval_frac}, {"seed", eval_seed}, {"out", eval_out}};
      if (is_probe) {
        cfg["epochs"] = probe_epochs;
        cfg["lr"] = probe_lr;
      } else {
        cfg["k"] = knn_k;
      }
      write_manifest(name, cfg, manifest_path, eval_out);

      const net::Checkpoint ck = net::load_checkpoint(eval_ckpt);
      const tokenstore::Dataset ds = tokenstore::read_dataset(eval_data);
      if (!ds.header.has_labels) throw DataError("evaluation needs a labeled dataset");
      const Matf features = trainer::pooled_features(
          ck.params, ds, trainer::pooling_from_name(eval_pooling), threads);
      std::vector<int32_t> labels;
      labels.reserve(ds.size());
      for (const auto& s : ds.samples) labels.push_back(s.label);

      double accuracy = 0.0;
      if (is_probe) {
        trainer::ProbeConfig pc;
        pc.epochs = probe_epochs;
        pc.lr = probe_lr;
        pc.train_fraction = eval_frac;
        pc.seed = eval_seed;
        accuracy = trainer::linear_probe(features, labels, pc);
      } else {
        Rng rng(mix_seed(eval_seed, 0x4B4E4Eull));
        const std::vector<uint32_t> order = rng.permutation(static_cast<uint32_t>(ds.size()));
        int n_train = static_cast<int>(eval_frac * ds.size());
        n_train = std::clamp(n_train, 1, static_cast<int>(ds.size()) - 1);
        Matf train_f(n_train, features.cols);
        Matf test_f(static_cast<int>(ds.size()) - n_train, features.cols);
        std::vector<int32_t> train_l(n_train), test_l(ds.size() - n_train);
        for (size_t i = 0; i < ds.size(); ++i) {
          const float* src = features[order[i]];
          if (static_cast<int>(i) < n_train) {
            std::copy(src, src + features.cols, train_f[static_cast<int>(i)]);
            train_l[i] = labels[order[i]];
          } else {
            std::copy(src, src + features.cols, test_f[static_cast<int>(i) - n_train]);
            test_l[i - n_train] = labels[order[i]];
          }
        }
        accuracy = trainer::knn_eval(train_f, train_l, test_f, test_l, knn_k);
      }
      char line[64];
      std::snprintf(line, sizeof(line), "top1=%.6f\n", accuracy);
      std::cout << line;
      if (!eval_out.empty()) {
        std::ofstream os(eval_out);
        if (!os) throw DataError("cannot write report: " + eval_out);
        os << line;
      }
    } else if (*gen) {
      json cfg{{"ckpt", gen_ckpt}, {"steps", gen_steps}, {"temp", gen_temp},
               {"n", gen_n},       {"class", gen_class}, {"seed", gen_seed},
               {"out", gen_out}};
      write_manifest("generate", cfg, manifest_path, gen_out);
      const net::Checkpoint ck = net::load_checkpoint(gen_ckpt);
      if (gen_class >= 0 && !ck.params.cfg.conditional())
        throw DataError("--class requires a conditional checkpoint");
      sampler::DecodeSchedule sched;
      sched.steps = gen_steps;
      sched.temperature = gen_temp;
      sched.validate();
      std::vector<std::vector<uint16_t>> sequences;
      std::vector<int32_t> labels;
      for (int i = 0; i < gen_n; ++i) {
        Rng rng(mix_seed(gen_seed, 0x47454Eull + i));
        if (gen_class >= 0) {
          sequences.push_back(sampler::generate_conditional(ck.params, gen_class, sched, rng));
          labels.push_back(gen_class);
        } else {
          sequences.push_back(sampler::generate_unconditional(ck.params, sched, rng));
        }
      }
      const tokenstore::Dataset out = sampler::tokens_to_dataset(
          sequences, labels, static_cast<uint32_t>(ck.params.cfg.gen_vocab));
      tokenstore::write_dataset(out, gen_out);
      std::cout << "wrote " << gen_out << " (" << sequences.size() << " sequences)\n";
    } else if (*an) {
      json cfg{{"data", an_data},     {"out", an_out},   {"top_pairs", an_pairs},
               {"top_k", an_topk},    {"csv", an_csv}};
      write_manifest("analyze", cfg, manifest_path, an_out);
      const tokenstore::Dataset ds = tokenstore::read_dataset(an_data);
      const analysis::Report report = analysis::analyze(ds, an_pairs, an_topk, threads);
      std::ofstream os(an_out);
      if (!os) throw DataError("cannot write report: " + an_out);
      analysis::write_report(report, os);
      if (an_csv && !report.gen_curve.empty()) {
        analysis::write_curve_csv(report.gen_curve, derived_path(an_out, ".gen_curve.csv"));
        analysis::write_curve_csv(report.disc_curve, derived_path(an_out, ".disc_curve.csv"));
      }
      std::cout << "wrote " << an_out << "\n";
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
