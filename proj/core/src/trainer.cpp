#include "lease/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <ostream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lease::trainer {

namespace {

constexpr uint64_t kMaskStream = 0x4D41534Bull;   // "MASK"
constexpr uint64_t kDropStream = 0x44524F50ull;   // "DROP"
constexpr uint64_t kEpochStream = 0x45504F43ull;  // "EPOC"
constexpr uint64_t kProbeStream = 0x50524F42ull;  // "PROB"

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void write_metric_line(std::ostream& os, uint64_t step, uint32_t epoch, double lr, double lr_r,
                       double lr_c, double total, uint64_t n_u) {
  os << "step=" << step << " epoch=" << epoch << " lr=" << fmt_double(lr)
     << " L_R=" << fmt_double(lr_r) << " L_C=" << fmt_double(lr_c)
     << " total=" << fmt_double(total) << " N_u=" << n_u << "\n";
}

}  // namespace

void TrainConfig::validate() const {
  if (base_lr <= 0.0) throw std::invalid_argument("base_lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw std::invalid_argument("betas outside [0,1)");
  if (weight_decay < 0.0) throw std::invalid_argument("negative weight decay");
  if (grad_clip <= 0.0) throw std::invalid_argument("grad_clip must be positive");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw std::invalid_argument("label smoothing outside [0,1)");
  if (lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
  if (tau <= 0.0 || alpha <= 0.0) throw std::invalid_argument("temperatures must be positive");
  if (k_sel < 1) throw std::invalid_argument("k_sel must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (warmup_epochs < 0 || total_epochs < 1 || warmup_epochs > total_epochs)
    throw std::invalid_argument("need 0 <= warmup_epochs <= total_epochs");
  if (run_epochs == 0 || run_epochs < -1)
    throw std::invalid_argument("run_epochs must be -1 or positive");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  if (log_every < 1) throw std::invalid_argument("log_every must be >= 1");
  mask.validate();
}

double cosine_lr(uint64_t step, uint64_t warmup_steps, uint64_t total_steps, double base_lr) {
  if (step > total_steps) step = total_steps;
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return step >= total_steps && total_steps > 0 ? 0.0 : base_lr;
  const double t = static_cast<double>(step - warmup_steps) /
                   static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

AdamState make_adam_state(const net::Params<float>& params) {
  AdamState s;
  s.m = net::zeros_like(params);
  s.v = net::zeros_like(params);
  s.step = 0;
  return s;
}

void adamw_step(net::Params<float>& params, const net::Params<float>& grads, AdamState& state,
                double lr, double beta1, double beta2, double eps, double weight_decay,
                const std::vector<std::string>& frozen) {
  std::vector<Matf*> ps, ms, vs;
  std::vector<const Matf*> gs;
  std::vector<std::string> names;
  std::vector<bool> trainables;
  net::visit_params(params, [&](const std::string& n, Matf& m, bool t) {
    ps.push_back(&m);
    names.push_back(n);
    trainables.push_back(t);
  });
  net::visit_params(grads, [&](const std::string&, const Matf& m, bool) { gs.push_back(&m); });
  net::visit_params(state.m, [&](const std::string&, Matf& m, bool) { ms.push_back(&m); });
  net::visit_params(state.v, [&](const std::string&, Matf& m, bool) { vs.push_back(&m); });

  for (const Matf* g : gs)
    if (!all_finite(*g)) throw NumericError("non-finite gradient, update aborted");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

  for (size_t t = 0; t < ps.size(); ++t) {
    if (!trainables[t]) continue;
    if (std::find(frozen.begin(), frozen.end(), names[t]) != frozen.end()) continue;
    float* p = ps[t]->data();
    const float* g = gs[t]->data();
    float* m = ms[t]->data();
    float* v = vs[t]->data();
    const size_t n = ps[t]->size();
    for (size_t i = 0; i < n; ++i) {
      const double gi = g[i];
      const double mi = beta1 * m[i] + (1.0 - beta1) * gi;
      const double vi = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      const double update = mhat / (std::sqrt(vhat) + eps) + weight_decay * p[i];
      p[i] = static_cast<float>(p[i] - lr * update);
    }
  }
}

double clip_global_norm(net::Params<float>& grads, double max_norm) {
  double sq = 0.0;
  net::visit_params(grads, [&](const std::string&, const Matf& m, bool trainable) {
    if (!trainable) return;
    for (float x : m.v) sq += static_cast<double>(x) * x;
  });
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const float scale = static_cast<float>(max_norm / norm);
    net::visit_params(grads, [&](const std::string&, Matf& m, bool trainable) {
      if (!trainable) return;
      for (float& x : m.v) x *= scale;
    });
  }
  return norm;
}

namespace {

struct SampleOutcome {
  double recon = 0.0;
  double contrast = 0.0;
  bool contrast_valid = false;
  uint64_t n_u = 0;
};

}  // namespace

TrainResult train(const tokenstore::Dataset& ds, const codebook::Codebook& cb,
                  const codebook::NeighborTable& table, const net::ModelConfig& mc,
                  const TrainConfig& tc, std::ostream* metrics, const ResumePoint* resume) {
  tc.validate();
  mc.validate();
  if (ds.size() == 0) throw DataError("empty training dataset");
  if (static_cast<int>(ds.disc_vocab()) != cb.k())
    throw DataError("dataset disc vocabulary does not match the codebook size");
  if (static_cast<int>(ds.seq_len()) != mc.seq_len)
    throw DataError("dataset sequence length does not match the model");
  if (static_cast<int>(ds.gen_vocab()) != mc.gen_vocab)
    throw DataError("dataset gen vocabulary does not match the model");
  if (mc.contrast_dim != cb.dim()) throw DataError("contrast dimension does not match the codebook");
  if (!cb.normalized) throw std::invalid_argument("training expects a normalized codebook");
  if (table.k() != cb.k() || table.k_sel != tc.k_sel)
    throw DataError("neighbor table does not match the codebook or k_sel");

  const int n = static_cast<int>(ds.size());
  const int batch = std::min(tc.batch_size, n);
  const uint64_t steps_per_epoch = (n + batch - 1) / batch;
  const uint64_t total_steps = steps_per_epoch * tc.total_epochs;
  const uint64_t warmup_steps = steps_per_epoch * tc.warmup_epochs;
  const int ss = mc.seq_len;

  TrainResult result;
  result.params = resume ? resume->params : net::init_params(mc, tc.seed);
  result.opt = resume ? resume->opt : make_adam_state(result.params);
  uint64_t global_step = resume ? resume->global_step : 0;
  const uint32_t start_epoch = resume ? resume->next_epoch : 0;

  const bool use_contrast = tc.lambda > 0.0;
  const int threads = std::max(1, tc.threads);

  std::vector<net::Params<float>> tgrads;
  tgrads.reserve(threads);
  for (int t = 0; t < threads; ++t) tgrads.push_back(net::zeros_like(result.params));
  std::vector<std::vector<Matf*>> tgrad_slots(threads);
  for (int t = 0; t < threads; ++t)
    net::visit_params(tgrads[t],
                      [&](const std::string&, Matf& m, bool) { tgrad_slots[t].push_back(&m); });

  uint32_t end_epoch = static_cast<uint32_t>(tc.total_epochs);
  if (tc.run_epochs > 0)
    end_epoch = std::min(end_epoch, start_epoch + static_cast<uint32_t>(tc.run_epochs));

  for (uint32_t epoch = start_epoch; epoch < end_epoch; ++epoch) {
    Rng shuffle_rng(mix_seed(mix_seed(tc.seed, kEpochStream), epoch));
    const std::vector<uint32_t> order = shuffle_rng.permutation(n);

    double ep_recon = 0.0, ep_contrast = 0.0, ep_total = 0.0;
    uint64_t ep_nu = 0, ep_steps = 0;
    double last_lr = 0.0;

    for (uint64_t step_in_epoch = 0; step_in_epoch < steps_per_epoch; ++step_in_epoch) {
      const size_t begin = step_in_epoch * batch;
      const size_t end = std::min(begin + batch, static_cast<size_t>(n));
      const int bsz = static_cast<int>(end - begin);

      // Mask plans first: validity of the contrast term (N_u > 0) is known
      // before any forward pass, so the batch normalizers are fixed up front.
      std::vector<masking::MaskPlan> plans(bsz);
      int contrast_valid_count = 0;
      for (int slot = 0; slot < bsz; ++slot) {
        const uint64_t s =
            mix_seed(mix_seed(mix_seed(tc.seed, kMaskStream), global_step), slot);
        Rng rng(s);
        const double ratio = masking::sample_ratio(tc.mask, rng);
        plans[slot] = masking::build_plan(ss, ratio, rng);
        if (ss - plans[slot].masked_count() > 0) ++contrast_valid_count;
      }
      const double recon_scale = 1.0 / bsz;
      const double contrast_scale =
          contrast_valid_count > 0 ? 1.0 / contrast_valid_count : 0.0;

      for (int t = 0; t < threads; ++t)
        for (Matf* m : tgrad_slots[t]) m->fill(0.0f);
      std::vector<SampleOutcome> outcomes(bsz);

#pragma omp parallel for schedule(static) num_threads(threads)
      for (int slot = 0; slot < bsz; ++slot) {
        int tid = 0;
#ifdef _OPENMP
        tid = omp_get_thread_num();
#endif
        const tokenstore::TokenPairSample& sample = ds.samples[order[begin + slot]];
        Rng drop_rng(mix_seed(mix_seed(mix_seed(tc.seed, kDropStream), global_step), slot));
        Rng* drng = mc.dropout_p > 0.0f ? &drop_rng : nullptr;

        net::SampleTrace<float> tr;
        net::forward_sample(result.params, std::span<const uint16_t>(sample.gen), plans[slot],
                            -1, !use_contrast, drng, tr);

        Matf dlogits;
        SampleOutcome& oc = outcomes[slot];
        oc.recon = objectives::recon_loss(tr.logits, std::span<const uint16_t>(sample.gen),
                                          std::span<const uint8_t>(plans[slot].masked),
                                          tc.label_smoothing, &dlogits);
        for (float& x : dlogits.v) x *= static_cast<float>(recon_scale);

        Matf dz;
        if (use_contrast) {
          std::vector<uint16_t> disc;
          disc.reserve(tr.contrast_rows.size());
          for (int row : tr.contrast_rows) disc.push_back(sample.disc[tr.pos_ids[row - 1]]);
          Matf dz_local;
          const objectives::ContrastResult cr = objectives::contrast_loss(
              tr.z, std::span<const uint16_t>(disc), cb, table, tc.tau, tc.alpha, &dz_local);
          if (cr.valid) {
            oc.contrast = cr.loss;
            oc.contrast_valid = true;
            const float s = static_cast<float>(tc.lambda * contrast_scale);
            for (float& x : dz_local.v) x *= s;
            dz = std::move(dz_local);
          }
        }
        oc.n_u = static_cast<uint64_t>(tr.contrast_rows.size());
        if (!use_contrast) oc.n_u = static_cast<uint64_t>(ss - plans[slot].masked_count());

        net::backward_sample(result.params, tr, dlogits, dz, false, tgrads[tid]);
      }

      // Reduce per-thread buffers in thread order.
      for (int t = 1; t < threads; ++t)
        for (size_t i = 0; i < tgrad_slots[0].size(); ++i) {
          Matf& dst = *tgrad_slots[0][i];
          const Matf& src = *tgrad_slots[t][i];
          for (size_t j = 0; j < dst.v.size(); ++j) dst.v[j] += src.v[j];
        }

      double batch_recon = 0.0, batch_contrast = 0.0;
      uint64_t batch_nu = 0;
      for (const SampleOutcome& oc : outcomes) {
        batch_recon += oc.recon;
        if (oc.contrast_valid) batch_contrast += oc.contrast;
        batch_nu += oc.n_u;
      }
      batch_recon *= recon_scale;
      batch_contrast *= contrast_scale;
      const double batch_total = objectives::total_loss(batch_recon, batch_contrast, tc.lambda);
      if (!std::isfinite(batch_total))
        throw NumericError("non-finite loss at step " + std::to_string(global_step));

      clip_global_norm(tgrads[0], tc.grad_clip);
      const double lr = cosine_lr(global_step, warmup_steps, total_steps, tc.base_lr);
      adamw_step(result.params, tgrads[0], result.opt, lr, tc.beta1, tc.beta2, tc.adam_eps,
                 tc.weight_decay);

      last_lr = lr;
      ep_recon += batch_recon;
      ep_contrast += batch_contrast;
      ep_total += batch_total;
      ep_nu += batch_nu;
      ++ep_steps;

      if (metrics && global_step % static_cast<uint64_t>(tc.log_every) == 0)
        write_metric_line(*metrics, global_step, epoch, lr, batch_recon, batch_contrast,
                          batch_total, batch_nu);
      ++global_step;
    }

    EpochStats es;
    es.step_end = global_step;
    es.lr = last_lr;
    es.recon = ep_recon / ep_steps;
    es.contrast = ep_contrast / ep_steps;
    es.total = ep_total / ep_steps;
    es.unmasked = ep_nu;
    result.epochs.push_back(es);
    if (metrics)
      write_metric_line(*metrics, global_step, epoch, es.lr, es.recon, es.contrast, es.total,
                        es.unmasked);
  }

  result.final_step = global_step;
  result.next_epoch = std::max(start_epoch, end_epoch);
  return result;
}

namespace {

Matf pack_counters(uint32_t next_epoch, uint64_t global_step, uint64_t adam_step) {
  Matf m(1, 6);
  m.v[0] = std::bit_cast<float>(next_epoch);
  m.v[1] = std::bit_cast<float>(static_cast<uint32_t>(global_step & 0xFFFFFFFFull));
  m.v[2] = std::bit_cast<float>(static_cast<uint32_t>(global_step >> 32));
  m.v[3] = std::bit_cast<float>(static_cast<uint32_t>(adam_step & 0xFFFFFFFFull));
  m.v[4] = std::bit_cast<float>(static_cast<uint32_t>(adam_step >> 32));
  m.v[5] = 0.0f;
  return m;
}

}  // namespace

void save_train_checkpoint(const std::string& path, const net::Params<float>& params,
                           const AdamState& opt, uint32_t next_epoch, uint64_t global_step) {
  std::map<std::string, Matf> extra;
  net::visit_params(opt.m, [&](const std::string& n, const Matf& m, bool) {
    extra.emplace("opt.m." + n, m);
  });
  net::visit_params(opt.v, [&](const std::string& n, const Matf& m, bool) {
    extra.emplace("opt.v." + n, m);
  });
  extra.emplace("trainer.counters", pack_counters(next_epoch, global_step, opt.step));
  net::save_checkpoint(params, extra, path);
}

ResumePoint load_train_checkpoint(const std::string& path) {
  net::Checkpoint ck = net::load_checkpoint(path);
  ResumePoint rp;
  rp.params = ck.params;
  rp.opt = make_adam_state(rp.params);

  const auto counters = ck.extra.find("trainer.counters");
  if (counters == ck.extra.end() || counters->second.size() < 6)
    throw DataError("not a training checkpoint (missing counters): " + path);
  rp.next_epoch = std::bit_cast<uint32_t>(counters->second.v[0]);
  rp.global_step = static_cast<uint64_t>(std::bit_cast<uint32_t>(counters->second.v[1])) |
                   (static_cast<uint64_t>(std::bit_cast<uint32_t>(counters->second.v[2])) << 32);
  rp.opt.step = static_cast<uint64_t>(std::bit_cast<uint32_t>(counters->second.v[3])) |
                (static_cast<uint64_t>(std::bit_cast<uint32_t>(counters->second.v[4])) << 32);

  auto fill = [&](net::Params<float>& dst, const std::string& prefix) {
    net::visit_params(dst, [&](const std::string& n, Matf& m, bool) {
      const auto it = ck.extra.find(prefix + n);
      if (it == ck.extra.end()) throw DataError("training checkpoint missing " + prefix + n);
      if (!it->second.same_shape(m)) throw DataError("optimizer tensor shape mismatch for " + n);
      m = it->second;
    });
  };
  fill(rp.opt.m, "opt.m.");
  fill(rp.opt.v, "opt.v.");
  return rp;
}

Pooling pooling_from_name(const std::string& name) {
  if (name == "cls") return Pooling::kCls;
  if (name == "mean" || name == "mean-of-patches") return Pooling::kMean;
  throw std::invalid_argument("unknown pooling: " + name);
}

Matf pooled_features(const net::Params<float>& params, const tokenstore::Dataset& ds,
                     Pooling pooling, int threads) {
  const net::ModelConfig& cfg = params.cfg;
  if (static_cast<int>(ds.seq_len()) != cfg.seq_len)
    throw DataError("dataset sequence length does not match the model");
  if (static_cast<int>(ds.gen_vocab()) != cfg.gen_vocab)
    throw DataError("dataset gen vocabulary does not match the model");
  const int n = static_cast<int>(ds.size());
  const int ss = cfg.seq_len;
  const int d = cfg.embed_dim;

  std::vector<int> pos_ids(ss);
  for (int i = 0; i < ss; ++i) pos_ids[i] = i;

  Matf features(n, d);
#pragma omp parallel for schedule(static) num_threads(std::max(1, threads))
  for (int i = 0; i < n; ++i) {
    std::vector<int> tokens(1 + ss);
    tokens[0] = cfg.cls_id();
    for (int j = 0; j < ss; ++j) tokens[1 + j] = ds.samples[i].gen[j];
    const Matf latents = net::encode<float>(params, tokens, pos_ids, nullptr, nullptr);
    float* out = features[i];
    if (pooling == Pooling::kCls) {
      std::memcpy(out, latents[0], sizeof(float) * d);
    } else {
      for (int j = 1; j <= ss; ++j)
        for (int c = 0; c < d; ++c) out[c] += latents[j][c];
      for (int c = 0; c < d; ++c) out[c] /= static_cast<float>(ss);
    }
  }
  return features;
}

double linear_probe(const Matf& features, std::span<const int32_t> labels,
                    const ProbeConfig& cfg) {
  const int n = features.rows;
  const int f = features.cols;
  if (static_cast<size_t>(n) != labels.size())
    throw std::invalid_argument("one label per feature row required");
  if (n < 2) throw std::invalid_argument("need at least two samples");
  if (cfg.epochs < 1 || cfg.lr <= 0.0) throw std::invalid_argument("bad probe settings");
  if (cfg.train_fraction <= 0.0 || cfg.train_fraction >= 1.0)
    throw std::invalid_argument("train fraction outside (0,1)");

  int classes = 0;
  for (int32_t l : labels) {
    if (l < 0) throw std::invalid_argument("negative label");
    classes = std::max(classes, l + 1);
  }
  int distinct = 0;
  {
    std::vector<uint8_t> seen(classes, 0);
    for (int32_t l : labels)
      if (!seen[l]) {
        seen[l] = 1;
        ++distinct;
      }
  }
  if (distinct < 2) throw std::invalid_argument("single-class input");

  Rng rng(mix_seed(cfg.seed, kProbeStream));
  const std::vector<uint32_t> order = rng.permutation(n);
  int n_train = static_cast<int>(cfg.train_fraction * n);
  n_train = std::clamp(n_train, 1, n - 1);
  const int n_test = n - n_train;

  // Plain softmax regression, full-batch Adam.
  std::vector<double> w(static_cast<size_t>(classes) * f, 0.0);
  std::vector<double> b(classes, 0.0);
  std::vector<double> mw(w.size(), 0.0), vw(w.size(), 0.0);
  std::vector<double> mb(classes, 0.0), vb(classes, 0.0);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  std::vector<double> logits(classes);
  std::vector<double> gw(w.size());
  std::vector<double> gb(classes);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (int i = 0; i < n_train; ++i) {
      const float* x = features[order[i]];
      const int y = labels[order[i]];
      for (int c = 0; c < classes; ++c) {
        double dot = b[c];
        const double* wr = w.data() + static_cast<size_t>(c) * f;
        for (int j = 0; j < f; ++j) dot += wr[j] * x[j];
        logits[c] = dot;
      }
      double mx = logits[0];
      for (int c = 1; c < classes; ++c) mx = std::max(mx, logits[c]);
      double sum = 0.0;
      for (int c = 0; c < classes; ++c) {
        logits[c] = std::exp(logits[c] - mx);
        sum += logits[c];
      }
      for (int c = 0; c < classes; ++c) {
        const double g = logits[c] / sum - (c == y ? 1.0 : 0.0);
        gb[c] += g;
        double* gwr = gw.data() + static_cast<size_t>(c) * f;
        for (int j = 0; j < f; ++j) gwr[j] += g * x[j];
      }
    }
    const double inv = 1.0 / n_train;
    const double bc1 = 1.0 - std::pow(b1, epoch);
    const double bc2 = 1.0 - std::pow(b2, epoch);
    auto adam = [&](std::vector<double>& p, std::vector<double>& g, std::vector<double>& m,
                    std::vector<double>& v) {
      for (size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i] * inv;
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        p[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      }
    };
    adam(w, gw, mw, vw);
    adam(b, gb, mb, vb);
  }

  int correct = 0;
  for (int i = n_train; i < n; ++i) {
    const float* x = features[order[i]];
    int best = 0;
    double best_score = -1e300;
    for (int c = 0; c < classes; ++c) {
      double dot = b[c];
      const double* wr = w.data() + static_cast<size_t>(c) * f;
      for (int j = 0; j < f; ++j) dot += wr[j] * x[j];
      if (dot > best_score) {  // ties keep the smaller class id
        best_score = dot;
        best = c;
      }
    }
    correct += best == labels[order[i]];
  }
  return static_cast<double>(correct) / n_test;
}

double knn_eval(const Matf& train_features, std::span<const int32_t> train_labels,
                const Matf& test_features, std::span<const int32_t> test_labels, int k) {
  const int n_train = train_features.rows;
  const int n_test = test_features.rows;
  const int f = train_features.cols;
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  if (k > n_train) throw std::invalid_argument("k exceeds the training set size");
  if (test_features.cols != f) throw std::invalid_argument("feature dimensions differ");
  if (static_cast<size_t>(n_train) != train_labels.size() ||
      static_cast<size_t>(n_test) != test_labels.size())
    throw std::invalid_argument("label count mismatch");

  auto norms = [f](const Matf& m) {
    std::vector<double> out(m.rows);
    for (int i = 0; i < m.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < f; ++j) s += static_cast<double>(m[i][j]) * m[i][j];
      out[i] = std::sqrt(s);
    }
    return out;
  };
  const std::vector<double> train_norm = norms(train_features);
  const std::vector<double> test_norm = norms(test_features);

  int classes = 0;
  for (int32_t l : train_labels) classes = std::max(classes, l + 1);
  for (int32_t l : test_labels) classes = std::max(classes, l + 1);

  int correct = 0;
  std::vector<std::pair<double, int>> sims(n_train);
  std::vector<int> votes(classes);
  for (int i = 0; i < n_test; ++i) {
    for (int t = 0; t < n_train; ++t) {
      double dot = 0.0;
      for (int j = 0; j < f; ++j)
        dot += static_cast<double>(test_features[i][j]) * train_features[t][j];
      const double denom = test_norm[i] * train_norm[t];
      sims[t] = {denom > 0.0 ? dot / denom : 0.0, t};
    }
    std::partial_sort(sims.begin(), sims.begin() + k, sims.end(),
                      [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                      });
    std::fill(votes.begin(), votes.end(), 0);
    for (int t = 0; t < k; ++t) ++votes[train_labels[sims[t].second]];
    int best = 0;
    for (int c = 1; c < classes; ++c)
      if (votes[c] > votes[best]) best = c;  // ties keep the smaller class id
    correct += best == test_labels[i];
  }
  return static_cast<double>(correct) / n_test;
}

}  // namespace lease::trainer
