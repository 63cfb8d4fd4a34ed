#include "lease/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <ostream>

#include "lease/objectives.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lease::sampler {

void DecodeSchedule::validate() const {
  if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
  if (temperature < 0.0) throw std::invalid_argument("temperature must be non-negative");
}

int keep_count(int seq_len, int steps, int step) {
  if (step < 0 || step > steps) throw std::invalid_argument("step outside [0, steps]");
  if (step == 0) return 0;
  const double phase = 1.5707963267948966 * static_cast<double>(steps - step) / steps;
  return static_cast<int>(std::ceil(seq_len * std::cos(phase)));
}

namespace {

struct Candidate {
  int pos;
  int token;
  double score;
};

std::vector<uint16_t> generate_impl(const net::Params<float>& params, int cond_label,
                                    const DecodeSchedule& schedule, Rng& rng,
                                    GenerationTrace* trace) {
  schedule.validate();
  const net::ModelConfig& cfg = params.cfg;
  const int ss = cfg.seq_len;
  const int v = cfg.gen_vocab;
  const int s_total = schedule.steps;
  const double temp = schedule.temperature;

  // At inference nothing is dropped: the encoder sees [CLS] plus the full
  // sequence (open positions as [MASK]) and the canvas is the full latent
  // sequence.
  std::vector<int> tokens(1 + ss, cfg.mask_id());
  tokens[0] = cfg.cls_id();
  std::vector<uint8_t> fixed(ss, 0);
  std::vector<int> pos_ids(ss);
  for (int i = 0; i < ss; ++i) pos_ids[i] = i;

  int fixed_count = 0;
  std::vector<double> p(v);
  for (int s = 1; s <= s_total; ++s) {
    const Matf latents = net::encode<float>(params, tokens, pos_ids, nullptr, nullptr);
    Matf canvas(ss, cfg.embed_dim);
    for (int j = 0; j < ss; ++j)
      std::memcpy(canvas[j], latents[1 + j], sizeof(float) * cfg.embed_dim);
    const Matf logits = net::decode<float>(params, canvas, cond_label, nullptr, nullptr);

    // Sample every still-open position, then commit the most confident ones
    // until the cumulative count matches the schedule.
    std::vector<Candidate> candidates;
    candidates.reserve(ss - fixed_count);
    const double gumbel_scale =
        temp * static_cast<double>(s_total - s) / static_cast<double>(s_total);
    for (int j = 0; j < ss; ++j) {
      if (fixed[j]) continue;
      const float* row = logits[j];
      double mx = row[0];
      for (int t = 1; t < v; ++t) mx = std::max(mx, static_cast<double>(row[t]));
      double sum = 0.0;
      for (int t = 0; t < v; ++t) {
        p[t] = std::exp(static_cast<double>(row[t]) - mx);
        sum += p[t];
      }
      int tok;
      if (temp == 0.0) {
        tok = 0;
        for (int t = 1; t < v; ++t)
          if (p[t] > p[tok]) tok = t;
      } else {
        // Categorical draw from softmax(logits / temperature).
        double tsum = 0.0;
        std::vector<double> tp(v);
        for (int t = 0; t < v; ++t) {
          tp[t] = std::pow(p[t], 1.0 / temp);
          tsum += tp[t];
        }
        const double u = rng.uniform() * tsum;
        double acc = 0.0;
        tok = v - 1;
        for (int t = 0; t < v; ++t) {
          acc += tp[t];
          if (acc >= u) {
            tok = t;
            break;
          }
        }
      }
      double score = p[tok] / sum;  // model probability of the sampled token
      if (gumbel_scale > 0.0) score += gumbel_scale * rng.gumbel();
      candidates.push_back({j, tok, score});
    }

    const int target = keep_count(ss, s_total, s);
    const int newly = target - fixed_count;
    std::partial_sort(candidates.begin(),
                      candidates.begin() + std::min<size_t>(newly, candidates.size()),
                      candidates.end(), [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        return a.pos < b.pos;
                      });
    for (int c = 0; c < newly && c < static_cast<int>(candidates.size()); ++c) {
      const Candidate& cand = candidates[c];
      fixed[cand.pos] = 1;
      tokens[1 + cand.pos] = cand.token;
      ++fixed_count;
    }
    if (trace) {
      trace->tokens_after_step.emplace_back(tokens.begin() + 1, tokens.end());
      trace->fixed_after_step.push_back(fixed);
    }
  }

  std::vector<uint16_t> out(ss);
  for (int j = 0; j < ss; ++j) out[j] = static_cast<uint16_t>(tokens[1 + j]);
  return out;
}

}  // namespace

std::vector<uint16_t> generate_unconditional(const net::Params<float>& params,
                                             const DecodeSchedule& schedule, Rng& rng,
                                             GenerationTrace* trace) {
  return generate_impl(params, -1, schedule, rng, trace);
}

std::vector<uint16_t> generate_conditional(const net::Params<float>& params, int class_id,
                                           const DecodeSchedule& schedule, Rng& rng,
                                           GenerationTrace* trace) {
  if (!params.cfg.conditional()) throw DataError("checkpoint has no class table");
  if (class_id < 0 || class_id >= params.cfg.class_count)
    throw std::invalid_argument("class id out of range");
  return generate_impl(params, class_id, schedule, rng, trace);
}

net::Params<float> finetune_conditional_decoder(const net::Params<float>& pretrained,
                                                const tokenstore::Dataset& ds,
                                                const codebook::Codebook& cb, int class_count,
                                                const FinetuneConfig& cfg,
                                                std::ostream* metrics) {
  if (!ds.header.has_labels) throw DataError("conditional fine-tune needs a labeled dataset");
  if (class_count < 1) throw std::invalid_argument("class_count must be >= 1");
  for (const auto& s : ds.samples)
    if (s.label < 0 || s.label >= class_count) throw DataError("label outside class_count");
  if (static_cast<int>(ds.seq_len()) != pretrained.cfg.seq_len)
    throw DataError("dataset sequence length does not match the model");
  if (cb.dim() != pretrained.cfg.contrast_dim)
    throw DataError("codebook dimension does not match the model");
  cfg.mask.validate();

  // Build the conditional parameter set: pretrained weights plus a fresh
  // class table, centroid projection, and a frozen copy of the centroids.
  net::ModelConfig mc = pretrained.cfg;
  mc.class_count = class_count;
  mc.cond_codebook_k = cb.k();
  net::Params<float> params = net::init_params(mc, cfg.seed);
  {
    std::vector<const Matf*> src;
    net::visit_params(pretrained,
                      [&](const std::string&, const Matf& m, bool) { src.push_back(&m); });
    size_t i = 0;
    net::visit_params(params, [&](const std::string& name, Matf& m, bool) {
      if (name.rfind("cond.", 0) == 0) return;  // fresh conditional tensors
      m = *src[i++];
    });
  }
  const codebook::Codebook norm_cb = cb.normalized ? cb : codebook::normalize(cb);
  params.cond_centroids = norm_cb.centroids;

  std::vector<std::string> frozen;
  net::visit_params(params, [&](const std::string& name, const Matf&, bool) {
    const bool trainable = name.rfind("dec.", 0) == 0 || name == "dec_pos" ||
                           name == "out.w" || name == "out.b" || name.rfind("cond.", 0) == 0;
    if (!trainable) frozen.push_back(name);
  });

  trainer::AdamState opt = trainer::make_adam_state(params);
  const int n = static_cast<int>(ds.size());
  const int batch = std::min(cfg.batch_size, n);
  const uint64_t steps_per_epoch = (n + batch - 1) / batch;
  const uint64_t total_steps = steps_per_epoch * cfg.total_epochs;
  const uint64_t warmup_steps = steps_per_epoch * cfg.warmup_epochs;
  const int ss = mc.seq_len;
  const int threads = std::max(1, cfg.threads);

  std::vector<net::Params<float>> tgrads;
  for (int t = 0; t < threads; ++t) tgrads.push_back(net::zeros_like(params));
  std::vector<std::vector<Matf*>> tslots(threads);
  for (int t = 0; t < threads; ++t)
    net::visit_params(tgrads[t], [&](const std::string&, Matf& m, bool) { tslots[t].push_back(&m); });

  uint64_t global_step = 0;
  for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(mix_seed(cfg.seed, 0x46545550ull), epoch));  // "FTUP"
    const std::vector<uint32_t> order = shuffle_rng.permutation(n);
    double ep_loss = 0.0;
    uint64_t ep_steps = 0;

    for (uint64_t step_in_epoch = 0; step_in_epoch < steps_per_epoch; ++step_in_epoch) {
      const size_t begin = step_in_epoch * batch;
      const size_t end = std::min(begin + batch, static_cast<size_t>(n));
      const int bsz = static_cast<int>(end - begin);

      std::vector<masking::MaskPlan> plans(bsz);
      for (int slot = 0; slot < bsz; ++slot) {
        Rng rng(mix_seed(mix_seed(mix_seed(cfg.seed, 0x46544D4Bull), global_step), slot));
        const double ratio = masking::sample_ratio(cfg.mask, rng);
        plans[slot] = masking::build_plan(ss, ratio, rng);
      }
      for (int t = 0; t < threads; ++t)
        for (Matf* m : tslots[t]) m->fill(0.0f);

      std::vector<double> losses(bsz, 0.0);
      const double recon_scale = 1.0 / bsz;

#pragma omp parallel for schedule(static) num_threads(threads)
      for (int slot = 0; slot < bsz; ++slot) {
        int tid = 0;
#ifdef _OPENMP
        tid = omp_get_thread_num();
#endif
        const tokenstore::TokenPairSample& sample = ds.samples[order[begin + slot]];
        net::SampleTrace<float> tr;
        net::forward_sample(params, std::span<const uint16_t>(sample.gen), plans[slot],
                            sample.label, /*skip_contrast=*/true, nullptr, tr);
        Matf dlogits;
        losses[slot] = objectives::recon_loss(tr.logits, std::span<const uint16_t>(sample.gen),
                                              std::span<const uint8_t>(plans[slot].masked),
                                              cfg.label_smoothing, &dlogits);
        for (float& x : dlogits.v) x *= static_cast<float>(recon_scale);
        net::backward_sample(params, tr, dlogits, Matf(), /*stop_at_canvas=*/true, tgrads[tid]);
      }

      for (int t = 1; t < threads; ++t)
        for (size_t i = 0; i < tslots[0].size(); ++i) {
          Matf& dst = *tslots[0][i];
          const Matf& src = *tslots[t][i];
          for (size_t j = 0; j < dst.v.size(); ++j) dst.v[j] += src.v[j];
        }

      const double batch_loss =
          std::accumulate(losses.begin(), losses.end(), 0.0) * recon_scale;
      if (!std::isfinite(batch_loss))
        throw NumericError("non-finite fine-tune loss at step " + std::to_string(global_step));

      trainer::clip_global_norm(tgrads[0], cfg.grad_clip);
      const double lr = trainer::cosine_lr(global_step, warmup_steps, total_steps, cfg.base_lr);
      trainer::adamw_step(params, tgrads[0], opt, lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
                          cfg.weight_decay, frozen);

      ep_loss += batch_loss;
      ++ep_steps;
      if (metrics && global_step % static_cast<uint64_t>(cfg.log_every) == 0)
        *metrics << "step=" << global_step << " epoch=" << epoch << " lr=" << lr
                 << " L_R=" << batch_loss << " L_C=0 total=" << batch_loss << " N_u=0\n";
      ++global_step;
    }
    if (metrics)
      *metrics << "step=" << global_step << " epoch=" << epoch
               << " L_R=" << ep_loss / ep_steps << "\n";
  }
  return params;
}

tokenstore::Dataset tokens_to_dataset(const std::vector<std::vector<uint16_t>>& sequences,
                                      const std::vector<int32_t>& labels, uint32_t gen_vocab) {
  tokenstore::Dataset ds;
  ds.header.gen_only = true;
  ds.header.num_samples = static_cast<uint32_t>(sequences.size());
  ds.header.seq_len = sequences.empty() ? 0 : static_cast<uint32_t>(sequences.front().size());
  ds.header.gen_vocab = gen_vocab;
  ds.header.disc_vocab = 1;  // disc column is a zero placeholder
  ds.header.has_labels = !labels.empty();
  if (!labels.empty() && labels.size() != sequences.size())
    throw std::invalid_argument("label count does not match sequence count");
  ds.samples.reserve(sequences.size());
  for (size_t i = 0; i < sequences.size(); ++i) {
    tokenstore::TokenPairSample s;
    s.gen = sequences[i];
    s.disc.assign(s.gen.size(), 0);
    if (ds.header.has_labels) s.label = labels[i];
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace lease::sampler
