#include "evoada/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace evoada {

namespace {

std::size_t rows_checked(std::span<const double> probs, std::size_t K) {
  if (K == 0 || probs.size() % K != 0) throw std::invalid_argument("probability buffer is not [n, K]");
  const std::size_t n = probs.size() / K;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const double p = probs[i * K + k];
      if (!(p >= 0)) throw std::invalid_argument("row " + std::to_string(i) + " has a negative entry");
      s += p;
    }
    if (std::abs(s - 1) > 1e-6)
      throw std::invalid_argument("row " + std::to_string(i) + " sums to " + std::to_string(s));
  }
  return n;
}

double xlogx(double p) { return p > 0 ? p * std::log(p) : 0.0; }

double norm(const double* v, std::size_t F) {
  double s = 0;
  for (std::size_t f = 0; f < F; ++f) s += v[f] * v[f];
  return std::sqrt(s);
}

// Cosine distance; a zero vector is at distance 1 from everything.
double cosine_distance(const double* a, double na, const double* b, double nb, std::size_t F) {
  if (na == 0 || nb == 0) return 1.0;
  double dot = 0;
  for (std::size_t f = 0; f < F; ++f) dot += a[f] * b[f];
  return 1.0 - dot / (na * nb);
}

std::vector<int> assign(std::span<const double> features, std::size_t F,
                        const std::vector<double>& centroids, std::size_t K) {
  const std::size_t n = features.size() / F;
  std::vector<double> cn(K);
  for (std::size_t c = 0; c < K; ++c) cn[c] = norm(centroids.data() + c * F, F);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* f = features.data() + i * F;
    const double fn = norm(f, F);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < K; ++c) {
      const double d = cosine_distance(f, fn, centroids.data() + c * F, cn[c], F);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

double rate_equal(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == b[i];
  return a.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(a.size());
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

}  // namespace

void EstimatorConfig::check() const {
  if (!(w_ent >= 0 && w_div >= 0 && w_pse >= 0))
    throw std::invalid_argument("estimator weights must be >= 0");
}

std::vector<double> softmax_rows(std::span<const float> logits, std::size_t K) {
  if (K == 0 || logits.size() % K != 0) throw std::invalid_argument("logit buffer is not [n, K]");
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size() / K; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) m = std::max(m, static_cast<double>(logits[i * K + k]));
    double s = 0;
    for (std::size_t k = 0; k < K; ++k) s += p[i * K + k] = std::exp(logits[i * K + k] - m);
    for (std::size_t k = 0; k < K; ++k) p[i * K + k] /= s;
  }
  return p;
}

double entropy_term(std::span<const double> probs, std::size_t K) {
  const std::size_t n = rows_checked(probs, K);
  if (n == 0) throw std::invalid_argument("entropy_term: empty batch");
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double h = 0;
    for (std::size_t k = 0; k < K; ++k) h -= xlogx(probs[i * K + k]);
    total += h;
  }
  return total / static_cast<double>(n);
}

double diversity_term(std::span<const double> probs, std::size_t K) {
  const std::size_t n = rows_checked(probs, K);
  if (n == 0) throw std::invalid_argument("diversity_term: empty batch");
  double value = 0;
  for (std::size_t k = 0; k < K; ++k) {
    double m = 0;
    for (std::size_t i = 0; i < n; ++i) m += probs[i * K + k];
    value += xlogx(m / static_cast<double>(n));
  }
  return value;
}

std::vector<int> pseudo_labels(std::span<const double> features, std::size_t F,
                               std::span<const double> probs, std::size_t K) {
  if (F == 0 || features.size() % F != 0) throw std::invalid_argument("feature buffer is not [n, F]");
  if (K == 0 || probs.size() % K != 0) throw std::invalid_argument("probability buffer is not [n, K]");
  const std::size_t n = features.size() / F;
  if (probs.size() / K != n) throw std::invalid_argument("pseudo_labels: row count mismatch");

  // (1) soft centroids
  std::vector<double> centroids(K * F, 0.0), mass(K, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < K; ++c) {
      const double p = probs[i * K + c];
      mass[c] += p;
      for (std::size_t f = 0; f < F; ++f) centroids[c * F + f] += p * features[i * F + f];
    }
  for (std::size_t c = 0; c < K; ++c)
    if (mass[c] > 0)
      for (std::size_t f = 0; f < F; ++f) centroids[c * F + f] /= mass[c];
  // (2) nearest soft centroid
  auto labels = assign(features, F, centroids, K);
  // (3) hard centroids, one reassignment
  std::vector<double> hard(K * F, 0.0);
  std::vector<std::size_t> count(K, 0);
  for (std::size_t i = 0; i < n; ++i) {
    ++count[labels[i]];
    for (std::size_t f = 0; f < F; ++f) hard[labels[i] * F + f] += features[i * F + f];
  }
  for (std::size_t c = 0; c < K; ++c)
    if (count[c] > 0)
      for (std::size_t f = 0; f < F; ++f)
        centroids[c * F + f] = hard[c * F + f] / static_cast<double>(count[c]);
  return assign(features, F, centroids, K);
}

double pseudo_ce_term(std::span<const double> probs, std::size_t K, std::span<const int> labels) {
  if (K == 0 || probs.size() % K != 0) throw std::invalid_argument("probability buffer is not [n, K]");
  const std::size_t n = probs.size() / K;
  if (labels.size() != n) throw std::invalid_argument("pseudo_ce_term: label count mismatch");
  if (n == 0) throw std::invalid_argument("pseudo_ce_term: empty batch");
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= K)
      throw std::invalid_argument("pseudo_ce_term: label " + std::to_string(y) + " out of range");
    total -= std::log(probs[i * K + y]);
  }
  return total / static_cast<double>(n);
}

PEReport estimate(const NetworkWeights<float>& w, const DatasetPair& data,
                  const EstimatorConfig& cfg) {
  cfg.check();
  if (data.target_size() == 0) throw std::invalid_argument("estimate: empty target set");
  const std::size_t K = w.spec.num_classes, F = w.spec.feature_dim();
  const auto tgt = infer(w, data.target_images(), data.target_size());
  const auto probs = softmax_rows(tgt.logits, K);
  const auto feats = to_double(tgt.features);

  PEReport r;
  r.l_ent = entropy_term(probs, K);
  r.l_div = diversity_term(probs, K);
  const auto pseudo = pseudo_labels(feats, F, probs, K);
  r.l_pse = pseudo_ce_term(probs, K, pseudo);
  r.total = cfg.w_ent * r.l_ent + cfg.w_div * r.l_div + cfg.w_pse * r.l_pse;
  r.pseudo_quality = rate_equal(argmax_rows(tgt.logits, K), pseudo);

  if (data.source_size() > 0) {
    const auto src = infer(w, data.source_images, data.source_size());
    r.source_acc = rate_equal(argmax_rows(src.logits, K), data.source_labels);
  }
  return r;
}

std::vector<int> predict_target(const NetworkWeights<float>& w, const DatasetPair& data,
                                double unknown_entropy) {
  const std::size_t K = w.spec.num_classes;
  const auto tgt = infer(w, data.target_images(), data.target_size());
  auto pred = argmax_rows(tgt.logits, K);
  if (data.spec.variant == Variant::Open && K > 1) {
    const auto probs = softmax_rows(tgt.logits, K);
    const double hmax = std::log(static_cast<double>(K));
    for (std::size_t i = 0; i < pred.size(); ++i) {
      double h = 0;
      for (std::size_t k = 0; k < K; ++k) h -= xlogx(probs[i * K + k]);
      if (h / hmax > unknown_entropy) pred[i] = data.unknown_label();
    }
  }
  return pred;
}

double oracle_target_accuracy(const NetworkWeights<float>& w, const DatasetPair& data) {
  return oracle_accuracy(predict_target(w, data), data);
}

std::vector<long long> doubled_ranks(std::span<const double> xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<long long> r(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    // positions i..j (0-based) share rank (i + j) / 2 + 1
    const auto twice = static_cast<long long>(i + j + 2);
    for (std::size_t t = i; t <= j; ++t) r[order[t]] = twice;
    i = j + 1;
  }
  return r;
}

SpearmanResult spearman_exact(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("spearman: length mismatch");
  if (xs.size() < 2) throw std::invalid_argument("spearman: need at least 2 values");
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (std::isnan(xs[i]) || std::isnan(ys[i])) throw std::invalid_argument("spearman: NaN input");
  const auto rx = doubled_ranks(xs), ry = doubled_ranks(ys);
  const auto shift = static_cast<long long>(xs.size() + 1);
  SpearmanResult out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const long long a = rx[i] - shift, b = ry[i] - shift;
    out.num += a * b;
    out.var_x += a * a;
    out.var_y += b * b;
  }
  if (out.degenerate()) {
    out.rho = std::numeric_limits<double>::quiet_NaN();
  } else if (out.var_x == out.var_y) {
    // No ties on either side, or equal tie structure: one exact division.
    out.rho = static_cast<double>(static_cast<long double>(out.num) /
                                  static_cast<long double>(out.var_x));
  } else {
    const long double den = std::sqrt(static_cast<long double>(out.var_x)) *
                            std::sqrt(static_cast<long double>(out.var_y));
    out.rho = std::clamp(static_cast<double>(static_cast<long double>(out.num) / den), -1.0, 1.0);
  }
  return out;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  return spearman_exact(xs, ys).rho;
}

}  // namespace evoada
