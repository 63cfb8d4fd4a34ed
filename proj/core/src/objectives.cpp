#include "lease/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace lease::objectives {

template <class T>
double recon_loss(const Mat<T>& logits, std::span<const uint16_t> targets,
                  std::span<const uint8_t> canvas_mask, double label_smoothing,
                  Mat<T>* dlogits) {
  const int ss = logits.rows;
  const int v = logits.cols;
  if (static_cast<int>(targets.size()) != ss || static_cast<int>(canvas_mask.size()) != ss)
    throw std::invalid_argument("recon_loss shape mismatch");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw std::invalid_argument("label smoothing outside [0,1)");

  int masked = 0;
  for (uint8_t m : canvas_mask) masked += m != 0;
  if (masked == 0) throw std::invalid_argument("no masked position to reconstruct");

  if (dlogits) {
    *dlogits = Mat<T>(ss, v);
  }

  // Smoothed target: 1-eps on the true token, eps/v everywhere else.
  const double eps = label_smoothing;
  const double off = eps / v;
  const double qsum = (1.0 - eps) + off * (v - 1);
  const double inv_masked = 1.0 / masked;

  double total = 0.0;
  std::vector<double> p(v);
  for (int i = 0; i < ss; ++i) {
    if (!canvas_mask[i]) continue;
    const T* row = logits[i];
    const int t = targets[i];
    if (t >= v) throw std::invalid_argument("target token outside the vocabulary");
    double mx = static_cast<double>(row[0]);
    for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0.0;
    for (int j = 0; j < v; ++j) {
      p[j] = std::exp(static_cast<double>(row[j]) - mx);
      sum += p[j];
    }
    const double lse = mx + std::log(sum);
    double weighted = 0.0;
    for (int j = 0; j < v; ++j) weighted += off * static_cast<double>(row[j]);
    weighted += (1.0 - eps - off) * static_cast<double>(row[t]);
    total += qsum * lse - weighted;
    if (dlogits) {
      T* drow = (*dlogits)[i];
      const double inv_sum = 1.0 / sum;
      for (int j = 0; j < v; ++j) {
        const double q = j == t ? 1.0 - eps : off;
        drow[j] = static_cast<T>((qsum * p[j] * inv_sum - q) * inv_masked);
      }
    }
  }
  return total * inv_masked;
}

template <class T>
ContrastResult contrast_loss(const Mat<T>& z, std::span<const uint16_t> disc_tokens,
                             const codebook::Codebook& cb, const codebook::NeighborTable& table,
                             double tau, double alpha, Mat<T>* dz) {
  if (alpha <= 0.0) throw std::invalid_argument("alpha must be positive");
  if (!cb.normalized) throw std::invalid_argument("contrast needs a normalized codebook");
  if (table.k() != cb.k()) throw std::invalid_argument("neighbor table does not match codebook");
  if (static_cast<size_t>(z.rows) != disc_tokens.size())
    throw std::invalid_argument("one disc token per z row required");
  if (z.rows > 0 && z.cols != cb.dim())
    throw std::invalid_argument("z dimension does not match the codebook");

  ContrastResult result;
  if (z.rows == 0) return result;  // no unmasked token, flagged invalid
  result.valid = true;

  const int k = cb.k();
  const int d = cb.dim();
  const int k_sel = table.k_sel;
  const double inv_nu = 1.0 / z.rows;
  const double inv_alpha = 1.0 / alpha;

  if (dz) *dz = Mat<T>(z.rows, d);

  std::vector<double> logits(k);
  std::vector<double> p(k);
  double total = 0.0;
  for (int r = 0; r < z.rows; ++r) {
    const int anchor = disc_tokens[r];
    if (anchor >= k) throw std::invalid_argument("disc token outside the codebook");
    const T* zr = z[r];
    double mx = -1e300;
    for (int c = 0; c < k; ++c) {
      const float* cen = cb.centroids[c];
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += static_cast<double>(zr[j]) * cen[j];
      logits[c] = dot * inv_alpha;
      mx = std::max(mx, logits[c]);
    }
    double sum = 0.0;
    for (int c = 0; c < k; ++c) {
      p[c] = std::exp(logits[c] - mx);
      sum += p[c];
    }
    const double lse = mx + std::log(sum);
    const double inv_sum = 1.0 / sum;

    const std::vector<double> w = codebook::neighbor_weights(anchor, table, tau);
    const uint16_t* nbr = table.row_indices(anchor);
    double loss = -w[0] * (logits[anchor] - lse);
    for (int s = 0; s < k_sel; ++s) loss -= w[s + 1] * (logits[nbr[s]] - lse);
    total += loss;

    if (dz) {
      // dL/dlogit_c = (softmax_c - w_c) / N_u, then logits = z C^T / alpha.
      std::vector<double> dlogit(k);
      for (int c = 0; c < k; ++c) dlogit[c] = p[c] * inv_sum;
      dlogit[anchor] -= w[0];
      for (int s = 0; s < k_sel; ++s) dlogit[nbr[s]] -= w[s + 1];
      const double scale = inv_nu * inv_alpha;
      std::vector<double> acc(d, 0.0);
      for (int c = 0; c < k; ++c) {
        const double g = dlogit[c] * scale;
        const float* cen = cb.centroids[c];
        for (int j = 0; j < d; ++j) acc[j] += g * cen[j];
      }
      T* dzr = (*dz)[r];
      for (int j = 0; j < d; ++j) dzr[j] = static_cast<T>(acc[j]);
    }
  }
  result.loss = total * inv_nu;
  return result;
}

double total_loss(double recon, double contrast, double lambda) {
  if (!std::isfinite(recon) || !std::isfinite(contrast))
    throw NumericError("non-finite loss component");
  if (lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
  return recon + lambda * contrast;
}

template double recon_loss<float>(const Mat<float>&, std::span<const uint16_t>,
                                  std::span<const uint8_t>, double, Mat<float>*);
template double recon_loss<double>(const Mat<double>&, std::span<const uint16_t>,
                                   std::span<const uint8_t>, double, Mat<double>*);
template ContrastResult contrast_loss<float>(const Mat<float>&, std::span<const uint16_t>,
                                             const codebook::Codebook&,
                                             const codebook::NeighborTable&, double, double,
                                             Mat<float>*);
template ContrastResult contrast_loss<double>(const Mat<double>&, std::span<const uint16_t>,
                                              const codebook::Codebook&,
                                              const codebook::NeighborTable&, double, double,
                                              Mat<double>*);

}  // namespace lease::objectives
