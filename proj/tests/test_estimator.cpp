#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "evoada/estimator.hpp"
#include "test_support.hpp"

using namespace evoada;
using evoada::testing::fill_normal;

namespace {

std::vector<double> random_probs(Rng& rng, std::size_t n, std::size_t K, double scale = 2.0) {
  std::vector<float> z(n * K);
  for (auto& v : z) v = static_cast<float>(scale * rng.normal());
  return softmax_rows(z, K);
}

// Brute-force Spearman: average ranks by counting, Pearson on the ranks.
double brute_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        less += w < v[i];
        equal += w == v[i];
      }
      r[i] = less + (equal + 1) / 2;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

DatasetPair easy_blobs(std::uint64_t seed) {
  DatasetSpec s;
  s.task = TaskKind::Blobs2d;
  s.samples_per_class = 40;
  s.rotation_deg = 0;
  s.brightness = 0;
  s.seed = seed;
  return generate(s);
}

}  // namespace

TEST_CASE("entropy_term examples and bounds") {
  CHECK(entropy_term(std::vector<double>{1, 0, 0, 1}, 2) == 0.0);
  CHECK(entropy_term(std::vector<double>{0.5, 0.5, 0.5, 0.5}, 2) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK_THROWS(entropy_term(std::vector<double>{0.5, 0.6}, 2));
  CHECK_THROWS(entropy_term(std::vector<double>{1.5, -0.5}, 2));
  CHECK_THROWS(entropy_term(std::vector<double>{}, 2));

  Rng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t K = 2 + rng.uniform_below(6), n = 1 + rng.uniform_below(10);
    const auto p = random_probs(rng, n, K, 3.0);
    const double h = entropy_term(p, K);
    CHECK(h >= 0);
    CHECK(h <= std::log(static_cast<double>(K)) + 1e-12);
    const double d = diversity_term(p, K);
    CHECK(d <= 1e-15);
    CHECK(d >= -std::log(static_cast<double>(K)) - 1e-12);
    if (t < 50) {
      double direct = 0;
      for (double v : p) direct -= v > 0 ? v * std::log(v) : 0;
      CHECK(std::abs(h - direct / static_cast<double>(n)) < 1e-12);
    }
  }
}

TEST_CASE("diversity_term examples") {
  CHECK(diversity_term(std::vector<double>{1, 0, 0, 1}, 2) ==
        doctest::Approx(-std::log(2.0)).epsilon(1e-15));
  CHECK(diversity_term(std::vector<double>{1, 0, 1, 0, 1, 0}, 2) == 0.0);
}

TEST_CASE("pseudo_labels recover separated clusters") {
  Rng rng(2);
  const std::size_t F = 3, K = 2, n = 80;
  // clusters along orthogonal directions, spread 0.1, separation far above 6 sigma
  std::vector<double> feats(n * F), probs(n * K);
  std::vector<int> truth(n);
  for (std::size_t i = 0; i < n; ++i) {
    truth[i] = static_cast<int>(rng.uniform_below(2));
    for (std::size_t f = 0; f < F; ++f) feats[i * F + f] = 0.1 * rng.normal();
    feats[i * F + (truth[i] == 0 ? 0 : 1)] += 2.0;
    // roughly correct, noisy probabilities (15% flipped)
    const bool flip = rng.bernoulli(0.15);
    const double p0 = (truth[i] == 0) != flip ? 0.7 : 0.3;
    probs[i * K] = p0;
    probs[i * K + 1] = 1 - p0;
  }
  const auto labels = pseudo_labels(feats, F, probs, K);
  CHECK(labels == truth);

  // order equivariance
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_below(i + 1)]);
  std::vector<double> pf(n * F), pp(n * K);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(feats.begin() + perm[i] * F, F, pf.begin() + i * F);
    std::copy_n(probs.begin() + perm[i] * K, K, pp.begin() + i * K);
  }
  const auto permuted = pseudo_labels(pf, F, pp, K);
  for (std::size_t i = 0; i < n; ++i) CHECK(permuted[i] == labels[perm[i]]);

  // uniform positive rescaling of the features
  auto scaled = feats;
  for (auto& v : scaled) v *= 7.5;
  CHECK(pseudo_labels(scaled, F, probs, K) == labels);

  // one class
  std::vector<double> ones(n, 1.0);
  const auto single = pseudo_labels(feats, F, ones, 1);
  CHECK(std::all_of(single.begin(), single.end(), [](int y) { return y == 0; }));

  CHECK_THROWS(pseudo_labels(feats, F, std::vector<double>(4, 0.5), K));
}

TEST_CASE("pseudo_labels with an empty class and ties") {
  // class 2 has no mass; its centroid is the zero vector and never wins
  const std::vector<double> feats{1, 0, 0, 1, 1, 0.1};
  const std::vector<double> probs{1, 0, 0, 0, 1, 0, 0.9, 0.1, 0};
  const auto y = pseudo_labels(feats, 2, probs, 3);
  CHECK(y == std::vector<int>{0, 1, 0});
  // identical centroids: ties go to the lower class
  const std::vector<double> same{1, 0, 2, 0};
  const std::vector<double> half{0.5, 0.5, 0.5, 0.5};
  CHECK(pseudo_labels(same, 2, half, 2) == std::vector<int>{0, 0});
}

TEST_CASE("pseudo_ce_term values") {
  const std::vector<int> y{0, 1};
  CHECK(pseudo_ce_term(std::vector<double>{1, 0, 0, 1}, 2, y) == 0.0);
  CHECK(pseudo_ce_term(std::vector<double>(8, 0.25), 4, y) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-15));
  Rng rng(3);
  const auto p = random_probs(rng, 9, 5);
  std::vector<int> labels(9);
  double direct = 0;
  for (std::size_t i = 0; i < 9; ++i) {
    labels[i] = static_cast<int>(rng.uniform_below(5));
    direct -= std::log(p[i * 5 + labels[i]]);
  }
  CHECK(std::abs(pseudo_ce_term(p, 5, labels) - direct / 9) < 1e-12);
  CHECK_THROWS(pseudo_ce_term(std::vector<double>(8, 0.25), 4, std::vector<int>{0, 4}));
  CHECK_THROWS(pseudo_ce_term(std::vector<double>(8, 0.25), 4, std::vector<int>{0}));
}

TEST_CASE("estimate: trained model against a collapsed one") {
  const auto data = easy_blobs(4);
  auto w = build(BackboneSpec{}, SpaceParams{}, AttentionGenome::all_identity(4), {1, 2});
  DaLossConfig cfg;
  cfg.mode = DaMode::SingleStage;
  cfg.lambda_align = cfg.lambda_ent = 0;
  cfg.epochs = 10;
  cfg.batch_size = 32;
  cfg.grad_clip = 0;
  Rng rng(5);
  train(w, data, cfg, rng);
  // sharpen the classifier so predictions are confident
  for (auto& v : w.classifier_weight.data) v *= 4;
  for (auto& v : w.classifier_bias.data) v *= 4;

  const auto good = estimate(w, data);
  CHECK(good.l_ent < 0.1);
  CHECK(good.l_div == doctest::Approx(-std::log(4.0)).epsilon(0.05));
  CHECK(good.l_pse < 0.3);
  CHECK(good.total < -std::log(4.0) + 0.35);
  CHECK(good.total == good.l_ent + good.l_div + good.l_pse);
  CHECK(good.source_acc > 0.95);
  CHECK(good.pseudo_quality > 0.9);
  CHECK_FALSE(good.oracle_target_acc.has_value());
  CHECK(data.hidden.access_count() == 0);
  CHECK(estimate(w, data) == good);

  auto constant = w;
  std::fill(constant.classifier_weight.data.begin(), constant.classifier_weight.data.end(), 0.0f);
  std::fill(constant.classifier_bias.data.begin(), constant.classifier_bias.data.end(), 0.0f);
  constant.classifier_bias.data[0] = 50;
  const auto bad = estimate(constant, data);
  CHECK(std::abs(bad.l_div) < 1e-12);
  CHECK(bad.total > good.total);
  CHECK(data.hidden.access_count() == 0);

  CHECK(oracle_target_accuracy(w, data) > 0.9);
  CHECK(data.hidden.access_count() == 1);

  EstimatorConfig neg;
  neg.w_div = -1;
  CHECK_THROWS(estimate(w, data, neg));
}

TEST_CASE("spearman examples") {
  const std::vector<double> x{1, 2, 3, 4};
  CHECK(spearman(x, std::vector<double>{2, 1, 4, 3}) == 0.6);
  CHECK(spearman(x, x) == 1.0);
  CHECK(spearman(x, std::vector<double>{4, 3, 2, 1}) == -1.0);
  CHECK(spearman(x, std::vector<double>{std::exp(1.0), std::exp(2.0), std::exp(3.0), 1e9}) == 1.0);
  CHECK_THROWS(spearman(x, std::vector<double>{1, 2}));
  CHECK_THROWS(spearman(std::vector<double>{1}, std::vector<double>{1}));
  CHECK_THROWS(spearman(x, std::vector<double>{1, std::nan(""), 2, 3}));
  const auto flat = spearman_exact(x, std::vector<double>{5, 5, 5, 5});
  CHECK(flat.degenerate());
  CHECK(std::isnan(flat.rho));
  CHECK(doubled_ranks(std::vector<double>{3, 1, 3, 2}) == std::vector<long long>{7, 2, 7, 4});
}

TEST_CASE("spearman matches the brute-force oracle and monotone invariance") {
  Rng rng(6);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 2 + rng.uniform_below(30);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      // small integer values force ties
      a[i] = static_cast<double>(rng.uniform_below(t % 2 ? 5 : 1000));
      b[i] = static_cast<double>(rng.uniform_below(6)) + 0.5 * a[i];
    }
    const auto r = spearman_exact(a, b);
    if (r.degenerate()) continue;
    CHECK(std::abs(r.rho - brute_spearman(a, b)) < 1e-12);
    std::vector<double> ta(n);
    for (std::size_t i = 0; i < n; ++i) ta[i] = std::exp(0.01 * a[i]) * 3 - 2;
    CHECK(spearman(ta, b) == r.rho);
  }
}
