#include "evoada/uda.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "evoada/errors.hpp"

namespace evoada {

namespace {

// Stable log-softmax of one row into out (double precision).
template <typename T>
void log_softmax(const T* z, std::size_t K, double* out) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k) m = std::max(m, static_cast<double>(z[k]));
  double s = 0;
  for (std::size_t k = 0; k < K; ++k) s += std::exp(static_cast<double>(z[k]) - m);
  const double lse = m + std::log(s);
  for (std::size_t k = 0; k < K; ++k) out[k] = static_cast<double>(z[k]) - lse;
}

std::size_t rows_of(std::size_t size, std::size_t K) {
  if (K == 0 || size % K != 0) throw std::invalid_argument("logit buffer is not [n, K]");
  return size / K;
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.uniform_below(i)]);
  return p;
}

void gather(std::span<const float> images, std::size_t size, const std::vector<std::size_t>& idx,
            Buffer<float>& out) {
  out.resize(idx.size() * size);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(images.data() + idx[i] * size, size, out.data() + i * size);
}

}  // namespace

std::string to_string(DaMode m) { return m == DaMode::SingleStage ? "single_stage" : "two_stage"; }

DaMode da_mode_from_string(const std::string& s) {
  if (s == "single_stage") return DaMode::SingleStage;
  if (s == "two_stage") return DaMode::TwoStage;
  throw std::invalid_argument("unknown DA mode '" + s + "'");
}

void DaLossConfig::check() const {
  if (!(lambda_ent >= 0) || !(lambda_align >= 0))
    throw std::invalid_argument("loss weights must be >= 0");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(lr > 0)) throw std::invalid_argument("lr must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (!(grad_clip >= 0)) throw std::invalid_argument("grad_clip must be >= 0");
}

std::string DaLossConfig::method_name() const {
  return mode == DaMode::SingleStage ? "ce+mmd+ent" : "shot-im";
}

template <typename T>
double source_ce(std::span<const T> logits, std::size_t K, std::span<const int> labels, T* grad,
                 double scale) {
  const std::size_t n = rows_of(logits.size(), K);
  if (labels.size() != n) throw std::invalid_argument("source_ce: label count mismatch");
  if (n == 0) throw std::invalid_argument("source_ce: empty batch");
  std::vector<double> lp(K);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= K)
      throw std::invalid_argument("source_ce: label " + std::to_string(y) + " out of range");
    log_softmax(logits.data() + i * K, K, lp.data());
    total -= lp[y];
    if (grad)
      for (std::size_t k = 0; k < K; ++k)
        grad[i * K + k] += static_cast<T>(
            scale * (std::exp(lp[k]) - (static_cast<int>(k) == y ? 1.0 : 0.0)) / n);
  }
  return total / static_cast<double>(n);
}

template <typename T>
double target_entropy(std::span<const T> logits, std::size_t K, T* grad, double scale) {
  const std::size_t n = rows_of(logits.size(), K);
  if (n == 0) throw std::invalid_argument("target_entropy: empty batch");
  std::vector<double> lp(K);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    log_softmax(logits.data() + i * K, K, lp.data());
    double h = 0;
    for (std::size_t k = 0; k < K; ++k) h -= std::exp(lp[k]) * lp[k];
    total += h;
    // dH/dz_j = -p_j (log p_j + H)
    if (grad)
      for (std::size_t k = 0; k < K; ++k)
        grad[i * K + k] += static_cast<T>(-scale * std::exp(lp[k]) * (lp[k] + h) / n);
  }
  return total / static_cast<double>(n);
}

template <typename T>
double target_diversity(std::span<const T> logits, std::size_t K, T* grad, double scale) {
  const std::size_t n = rows_of(logits.size(), K);
  if (n == 0) throw std::invalid_argument("target_diversity: empty batch");
  std::vector<double> p(n * K), mean(K, 0.0), lp(K);
  for (std::size_t i = 0; i < n; ++i) {
    log_softmax(logits.data() + i * K, K, lp.data());
    for (std::size_t k = 0; k < K; ++k) {
      p[i * K + k] = std::exp(lp[k]);
      mean[k] += p[i * K + k] / n;
    }
  }
  double value = 0;
  std::vector<double> g(K, 0.0);
  for (std::size_t k = 0; k < K; ++k)
    if (mean[k] > 0) {
      value += mean[k] * std::log(mean[k]);
      g[k] = std::log(mean[k]);
    }
  if (grad)
    for (std::size_t i = 0; i < n; ++i) {
      double pg = 0;
      for (std::size_t k = 0; k < K; ++k) pg += p[i * K + k] * g[k];
      for (std::size_t k = 0; k < K; ++k)
        grad[i * K + k] += static_cast<T>(scale * p[i * K + k] * (g[k] - pg) / n);
    }
  return value;
}

template <typename T>
double align_mmd(std::span<const T> fs, std::span<const T> ft, std::size_t F, T* grad_s,
                 T* grad_t, double scale, double bandwidth) {
  const std::size_t ns = rows_of(fs.size(), F), nt = rows_of(ft.size(), F), n = ns + nt;
  if (ns == 0 || nt == 0) throw std::invalid_argument("align_mmd: empty batch");
  auto row = [&](std::size_t i) { return i < ns ? fs.data() + i * F : ft.data() + (i - ns) * F; };

  std::vector<double> d2(n * n, 0.0);
  std::vector<double> dists;
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const T* a = row(i);
      const T* b = row(j);
      double s = 0;
      for (std::size_t f = 0; f < F; ++f) {
        const double d = static_cast<double>(a[f]) - static_cast<double>(b[f]);
        s += d * d;
      }
      d2[i * n + j] = d2[j * n + i] = s;
      dists.push_back(std::sqrt(s));
    }
  double sigma = 1.0;
  if (bandwidth > 0) {
    sigma = bandwidth;
  } else if (!dists.empty()) {
    // Lower median, so the bandwidth is one of the observed distances.
    auto mid = dists.begin() + static_cast<std::ptrdiff_t>((dists.size() - 1) / 2);
    std::nth_element(dists.begin(), mid, dists.end());
    if (*mid > 0) sigma = *mid;
  }
  const double inv2s2 = 1.0 / (2 * sigma * sigma);

  // Pair weights: +1/ns^2 within source, +1/nt^2 within target, -2/(ns nt)
  // across (the cross sum counts each unordered pair twice over i, j).
  const double wss = 1.0 / (static_cast<double>(ns) * ns);
  const double wtt = 1.0 / (static_cast<double>(nt) * nt);
  const double wst = -1.0 / (static_cast<double>(ns) * nt);
  double value = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const bool si = i < ns, sj = j < ns;
      const double wgt = si && sj ? wss : (!si && !sj ? wtt : wst);
      const double k = std::exp(-d2[i * n + j] * inv2s2);
      value += wgt * k;
      if (i == j || (!grad_s && !grad_t)) continue;
      // d k(a_i, a_j) / d a_i = -k (a_i - a_j) / s^2; the (j, i) term adds the
      // same amount again, which the double loop supplies.
      if ((si && !grad_s) || (!si && !grad_t)) continue;
      T* gi = si ? grad_s + i * F : grad_t + (i - ns) * F;
      const T* a = row(i);
      const T* b = row(j);
      const double c = -scale * 2 * wgt * k * 2 * inv2s2;
      for (std::size_t f = 0; f < F; ++f)
        gi[f] += static_cast<T>(c * (static_cast<double>(a[f]) - static_cast<double>(b[f])));
    }
  return value;
}

std::vector<int> argmax_rows(std::span<const float> logits, std::size_t K) {
  const std::size_t n = rows_of(logits.size(), K);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* z = logits.data() + i * K;
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (z[k] > z[best]) best = k;
    out[i] = static_cast<int>(best);
  }
  return out;
}

TrainTrace train(NetworkWeights<float>& w, const DatasetPair& data, const DaLossConfig& cfg,
                 Rng& rng) {
  cfg.check();
  TrainTrace trace;
  trace.method = cfg.method_name();
  const auto& spec = w.spec;
  const std::size_t size = spec.input_channels * spec.input_height * spec.input_width;
  const std::size_t K = spec.num_classes, F = spec.feature_dim(), B = cfg.batch_size;
  if (data.spec.image_size() != size) throw ShapeError("train: dataset image size mismatch");
  if (data.source_size() == 0) throw std::invalid_argument("train: empty source domain");

  const bool two_stage = cfg.mode == DaMode::TwoStage;
  const std::size_t stage1 = two_stage ? (cfg.epochs + 1) / 2 : cfg.epochs;
  const std::size_t stage2 = cfg.epochs - stage1;
  const bool single_uses_target = cfg.lambda_align > 0 || cfg.lambda_ent > 0;
  const bool needs_target = two_stage ? stage2 > 0 : single_uses_target;
  std::span<const float> target;
  if (needs_target) {
    target = data.target_images();
    if (data.target_size() == 0) throw std::invalid_argument("train: empty target domain");
  }
  const std::size_t ns = data.source_size(), nt = data.target_size();

  Sgd opt(w, SgdConfig{cfg.lr, cfg.momentum, cfg.weight_decay});
  Buffer<float> xs, xt;
  std::vector<int> ys;
  std::vector<std::size_t> idx;
  std::vector<float> dls, dlt, dfs, dft;

  auto finish_step = [&](NetworkWeights<float>& grads, bool freeze) {
    if (!grads.all_finite()) return false;
    if (cfg.grad_clip > 0) {
      // norm over the tensors that are updated (the classifier is frozen in stage 2)
      auto gt = grads.tensors();
      if (freeze) gt.resize(gt.size() - 2);
      double sq = 0;
      for (const auto* t : gt)
        for (float g : t->data) sq += double(g) * g;
      if (const double norm = std::sqrt(sq); norm > cfg.grad_clip) {
        const auto scale = static_cast<float>(cfg.grad_clip / norm);
        for (auto* t : gt)
          for (auto& g : t->data) g *= scale;
      }
    }
    try {
      opt.step(w, grads, freeze);
    } catch (const DivergedError&) {
      return false;
    }
    ++trace.steps;
    return true;
  };

  for (std::size_t e = 0; e < cfg.epochs && !trace.diverged; ++e) {
    const bool source_epoch = e < stage1;
    const bool paired = source_epoch && !two_stage && single_uses_target;
    EpochStats st;
    st.stage = source_epoch ? 1 : 2;
    const auto ps = source_epoch ? permutation(ns, rng) : std::vector<std::size_t>{};
    const auto pt = (paired || !source_epoch) ? permutation(nt, rng) : std::vector<std::size_t>{};
    const std::size_t span_n = source_epoch ? (paired ? std::max(ns, nt) : ns) : nt;
    const std::size_t steps = (span_n + B - 1) / B;
    std::size_t correct = 0, seen = 0;

    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t m = std::min(B, span_n - s * B);
      auto grads = w.zeros_like();
      double loss = 0;
      if (source_epoch) {
        idx.resize(m);
        ys.resize(m);
        for (std::size_t i = 0; i < m; ++i) {
          idx[i] = ps[(s * B + i) % ns];
          ys[i] = data.source_labels[idx[i]];
        }
        gather(data.source_images, size, idx, xs);
        const auto fs = forward<float>(w, xs, m, true);
        const auto pred = argmax_rows(fs.logits, K);
        for (std::size_t i = 0; i < m; ++i) correct += pred[i] == ys[i];
        seen += m;
        dls.assign(m * K, 0.0f);
        const double ce = source_ce<float>(fs.logits, K, ys, dls.data());
        st.ce += ce;
        loss += ce;
        if (paired) {
          for (std::size_t i = 0; i < m; ++i) idx[i] = pt[(s * B + i) % nt];
          gather(target, size, idx, xt);
          const auto ft = forward<float>(w, xt, m, true);
          dlt.assign(m * K, 0.0f);
          dfs.assign(m * F, 0.0f);
          dft.assign(m * F, 0.0f);
          if (cfg.lambda_align > 0) {
            const double mmd = align_mmd<float>(fs.features, ft.features, F, dfs.data(),
                                                dft.data(), cfg.lambda_align);
            st.mmd += mmd;
            loss += cfg.lambda_align * mmd;
          }
          if (cfg.lambda_ent > 0) {
            const double ent = target_entropy<float>(ft.logits, K, dlt.data(), cfg.lambda_ent);
            st.entropy += ent;
            loss += cfg.lambda_ent * ent;
          }
          backward<float>(w, ft, dlt, dft, grads);
          backward<float>(w, fs, dls, dfs, grads);
        } else {
          backward<float>(w, fs, dls, {}, grads);
        }
      } else {
        idx.resize(m);
        for (std::size_t i = 0; i < m; ++i) idx[i] = pt[(s * B + i) % nt];
        gather(target, size, idx, xt);
        const auto ft = forward<float>(w, xt, m, true);
        dlt.assign(m * K, 0.0f);
        const double ent = target_entropy<float>(ft.logits, K, dlt.data(), cfg.lambda_ent);
        const double div = target_diversity<float>(ft.logits, K, dlt.data());
        st.entropy += ent;
        st.diversity += div;
        loss += cfg.lambda_ent * ent + div;
        backward<float>(w, ft, dlt, {}, grads);
      }
      if (!std::isfinite(loss) || !finish_step(grads, !source_epoch)) {
        trace.diverged = true;
        break;
      }
    }
    const double steps_d = static_cast<double>(std::max<std::size_t>(steps, 1));
    st.ce /= steps_d;
    st.mmd /= steps_d;
    st.entropy /= steps_d;
    st.diversity /= steps_d;
    st.source_acc = source_epoch && seen ? static_cast<double>(correct) / static_cast<double>(seen)
                                         : std::numeric_limits<double>::quiet_NaN();
    trace.epochs.push_back(st);
  }
  return trace;
}

template double source_ce<float>(std::span<const float>, std::size_t, std::span<const int>,
                                 float*, double);
template double source_ce<double>(std::span<const double>, std::size_t, std::span<const int>,
                                  double*, double);
template double target_entropy<float>(std::span<const float>, std::size_t, float*, double);
template double target_entropy<double>(std::span<const double>, std::size_t, double*, double);
template double target_diversity<float>(std::span<const float>, std::size_t, float*, double);
template double target_diversity<double>(std::span<const double>, std::size_t, double*, double);
template double align_mmd<float>(std::span<const float>, std::span<const float>, std::size_t,
                                 float*, float*, double, double);
template double align_mmd<double>(std::span<const double>, std::span<const double>, std::size_t,
                                  double*, double*, double, double);

}  // namespace evoada
