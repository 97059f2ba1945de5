#include <cmath>

#include "doctest.h"
#include "evoada/uda.hpp"
#include "test_support.hpp"

using namespace evoada;
using evoada::testing::fill_normal;
using evoada::testing::numeric_gradient;
using evoada::testing::relative_error;

namespace {

// log-sum-exp by direct summation, no max shift (inputs kept small).
double brute_ce(const std::vector<double>& z, std::size_t K, const std::vector<int>& y) {
  double total = 0;
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(z[i * K + k]);
    total += std::log(s) - z[i * K + y[i]];
  }
  return total / static_cast<double>(n);
}

double brute_entropy(const std::vector<double>& z, std::size_t K) {
  const std::size_t n = z.size() / K;
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(z[i * K + k]);
    for (std::size_t k = 0; k < K; ++k) {
      const double p = std::exp(z[i * K + k]) / s;
      total -= p * std::log(p);
    }
  }
  return total / static_cast<double>(n);
}

DatasetPair small_blobs(std::uint64_t seed, std::size_t per_class = 60) {
  DatasetSpec s;
  s.task = TaskKind::Blobs2d;
  s.samples_per_class = per_class;
  s.seed = seed;
  return generate(s);
}

}  // namespace

TEST_CASE("source_ce values") {
  const std::vector<double> uniform(3 * 4, 0.7);
  const std::vector<int> y{0, 3, 2};
  CHECK(source_ce<double>(uniform, 4, y) == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  std::vector<double> confident(3 * 4, 0.0);
  for (std::size_t i = 0; i < 3; ++i) confident[i * 4 + y[i]] = 10;
  CHECK(source_ce<double>(confident, 4, y) < 1e-3);

  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> z(7 * 5);
    fill_normal(z, rng, 2.0);
    std::vector<int> labels(7);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_below(5));
    CHECK(std::abs(source_ce<double>(z, 5, labels) - brute_ce(z, 5, labels)) < 1e-12);
  }
  CHECK_THROWS(source_ce<double>(uniform, 4, std::vector<int>{0, 4, 1}));
  CHECK_THROWS(source_ce<double>(uniform, 4, std::vector<int>{0, -1, 1}));
}

TEST_CASE("target_entropy values and bounds") {
  std::vector<double> sharp{20, -20, -20, 20};
  CHECK(target_entropy<double>(sharp, 2) < 1e-12);
  CHECK(target_entropy<double>(std::vector<double>{1.5, 1.5, -3, -3}, 2) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
  Rng rng(2);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t K = 2 + rng.uniform_below(6), n = 1 + rng.uniform_below(8);
    std::vector<double> z(n * K);
    fill_normal(z, rng, 4.0);
    const double h = target_entropy<double>(z, K);
    CHECK(h >= 0);
    CHECK(h <= std::log(static_cast<double>(K)) + 1e-12);
    if (t < 50) CHECK(std::abs(h - brute_entropy(z, K)) < 1e-12);
  }
}

TEST_CASE("target_diversity values") {
  // rows strongly favouring different classes: mean near uniform
  std::vector<double> z{30, 0, 0, 30};
  CHECK(target_diversity<double>(z, 2) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  std::vector<double> collapsed{30, 0, 30, 0};
  CHECK(std::abs(target_diversity<double>(collapsed, 2)) < 1e-11);
}

TEST_CASE("loss gradients match central differences") {
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    const std::size_t K = 4, n = 5, F = 3;
    std::vector<double> z(n * K);
    fill_normal(z, rng);
    std::vector<int> y(n);
    for (auto& l : y) l = static_cast<int>(rng.uniform_below(K));

    std::vector<double> g(n * K, 0.0);
    source_ce<double>(z, K, y, g.data(), 0.5);
    CHECK(relative_error(g, numeric_gradient(z, [&] { return 0.5 * source_ce<double>(z, K, y); })) <
          1e-6);
    std::fill(g.begin(), g.end(), 0.0);
    target_entropy<double>(z, K, g.data());
    CHECK(relative_error(g, numeric_gradient(z, [&] { return target_entropy<double>(z, K); })) <
          1e-6);
    std::fill(g.begin(), g.end(), 0.0);
    target_diversity<double>(z, K, g.data());
    CHECK(relative_error(g, numeric_gradient(z, [&] { return target_diversity<double>(z, K); })) <
          1e-6);

    std::vector<double> fs(n * F), ft(4 * F), gs(n * F, 0.0), gt(4 * F, 0.0);
    fill_normal(fs, rng);
    fill_normal(ft, rng);
    const double bw = 1.3;
    align_mmd<double>(fs, ft, F, gs.data(), gt.data(), 2.0, bw);
    auto mmd = [&] { return 2.0 * align_mmd<double>(fs, ft, F, nullptr, nullptr, 1.0, bw); };
    CHECK(relative_error(gs, numeric_gradient(fs, mmd)) < 1e-6);
    CHECK(relative_error(gt, numeric_gradient(ft, mmd)) < 1e-6);
  }
}

TEST_CASE("align_mmd properties") {
  Rng rng(4);
  const std::size_t F = 3;
  std::vector<double> a(6 * F);
  fill_normal(a, rng);
  // same multiset, rows in a different order
  std::vector<double> b;
  for (std::size_t i : {4, 1, 5, 0, 3, 2}) b.insert(b.end(), a.begin() + i * F, a.begin() + (i + 1) * F);
  CHECK(std::abs(align_mmd<double>(a, b, F)) < 1e-10);

  // Two point masses of 3 samples each at distance d. The median of the 15
  // joint distances is d, so the median bandwidth gives 2 - 2 exp(-1/2)
  // for every d; with a fixed bandwidth s the value is 2 - 2 exp(-d^2/2s^2).
  double prev = -1;
  for (double d : {1.0, 2.0, 4.0}) {
    std::vector<double> s(3 * F, 0.0), t(3 * F, 0.0);
    for (std::size_t i = 0; i < 3; ++i) t[i * F] = d;
    CHECK(align_mmd<double>(s, t, F) == doctest::Approx(2 - 2 * std::exp(-0.5)).epsilon(1e-12));
    const double fixed = align_mmd<double>(s, t, F, nullptr, nullptr, 1.0, 2.0);
    CHECK(fixed == doctest::Approx(2 - 2 * std::exp(-d * d / 8)).epsilon(1e-12));
    CHECK(fixed > prev);
    prev = fixed;
  }

  for (int t = 0; t < 200; ++t) {
    std::vector<double> x(5 * F), y(7 * F);
    fill_normal(x, rng);
    fill_normal(y, rng, 0.5);
    CHECK(align_mmd<double>(x, y, F) >= -1e-8);
  }
}

TEST_CASE("source-only training fits linearly separable blobs") {
  const auto data = small_blobs(21);
  BackboneSpec spec;
  auto w = build(spec, SpaceParams{}, AttentionGenome::all_identity(4), {1, 2});
  DaLossConfig cfg;
  cfg.mode = DaMode::SingleStage;
  cfg.lambda_align = cfg.lambda_ent = 0;
  cfg.epochs = 10;
  cfg.batch_size = 32;
  Rng rng(5);
  const auto trace = train(w, data, cfg, rng);
  REQUIRE_FALSE(trace.diverged);
  REQUIRE(trace.epochs.size() == 10);
  double best = 0;
  for (const auto& e : trace.epochs) best = std::max(best, e.source_acc);
  CHECK(best >= 0.95);
  // upward trend: the last half beats the first half on average
  double first = 0, last = 0;
  for (std::size_t e = 0; e < 5; ++e) {
    first += trace.epochs[e].source_acc;
    last += trace.epochs[e + 5].source_acc;
  }
  CHECK(last >= first);
  CHECK(data.target_access_count() == 0);
  CHECK(data.hidden.access_count() == 0);
}

TEST_CASE("training is deterministic") {
  const auto data = small_blobs(22, 30);
  for (auto mode : {DaMode::SingleStage, DaMode::TwoStage}) {
    DaLossConfig cfg;
    cfg.mode = mode;
    cfg.epochs = 2;
    auto w1 = build(BackboneSpec{}, SpaceParams{}, AttentionGenome::all_identity(4), {1, 2});
    auto w2 = w1;
    Rng r1(6), r2(6);
    const auto t1 = train(w1, data, cfg, r1);
    const auto t2 = train(w2, data, cfg, r2);
    CHECK(t1.epochs.size() == t2.epochs.size());
    for (std::size_t e = 0; e < t1.epochs.size(); ++e) {
      CHECK(t1.epochs[e].ce == t2.epochs[e].ce);
      CHECK(t1.epochs[e].mmd == t2.epochs[e].mmd);
      CHECK(t1.epochs[e].entropy == t2.epochs[e].entropy);
      CHECK(t1.epochs[e].diversity == t2.epochs[e].diversity);
    }
    CHECK(t1.method == cfg.method_name());
    const auto a = w1.tensors();
    const auto b = w2.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->data == b[i]->data);
  }
}

TEST_CASE("two-stage target phase leaves the classifier untouched") {
  const auto data = small_blobs(23, 30);
  DaLossConfig cfg;
  cfg.mode = DaMode::TwoStage;
  auto w_full = build(BackboneSpec{}, SpaceParams{}, AttentionGenome::all_identity(4), {1, 2});
  auto w_src = w_full;
  cfg.epochs = 1;  // stage 1 only
  Rng r1(7);
  const auto t1 = train(w_src, data, cfg, r1);
  CHECK(data.target_access_count() == 0);
  cfg.epochs = 2;  // stage 1 then one target epoch
  Rng r2(7);
  const auto t2 = train(w_full, data, cfg, r2);
  REQUIRE(t2.epochs.size() == 2);
  CHECK(t2.epochs[1].stage == 2);
  CHECK(std::isnan(t2.epochs[1].source_acc));
  CHECK(w_full.classifier_weight.data == w_src.classifier_weight.data);
  CHECK(w_full.classifier_bias.data == w_src.classifier_bias.data);
  CHECK(w_full.conv_weight[7].data != w_src.conv_weight[7].data);
  CHECK(data.target_access_count() == 1);
}

TEST_CASE("single-stage with target terms reads the target") {
  const auto data = small_blobs(24, 10);
  DaLossConfig cfg;
  cfg.mode = DaMode::SingleStage;
  cfg.epochs = 1;
  auto w = build(BackboneSpec{}, SpaceParams{}, AttentionGenome::all_identity(4), {1, 2});
  Rng rng(8);
  const auto t = train(w, data, cfg, rng);
  CHECK(data.target_access_count() == 1);
  CHECK(t.epochs[0].mmd >= 0);
  CHECK(t.epochs[0].entropy > 0);
  CHECK(data.hidden.access_count() == 0);
}

TEST_CASE("gradient clipping bounds the step") {
  const auto data = small_blobs(25, 10);  // 40 source samples: one batch, one step
  DaLossConfig cfg;
  cfg.epochs = 1;
  cfg.weight_decay = 0;
  auto step_norm = [&](double clip) {
    cfg.grad_clip = clip;
    auto w = build(BackboneSpec{}, SpaceParams{}, AttentionGenome::all_identity(4), {1, 2});
    const auto before = w;
    Rng rng(9);
    const auto t = train(w, data, cfg, rng);
    REQUIRE(t.steps == 1);
    double sq = 0;
    const auto a = w.tensors();
    const auto b = before.tensors();
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < a[i]->data.size(); ++j) {
        const double d = double(a[i]->data[j]) - double(b[i]->data[j]);
        sq += d * d;
      }
    return std::sqrt(sq);
  };
  const double free = step_norm(0);
  const double clipped = step_norm(1e-3);
  CHECK(free > cfg.lr * 1e-3 * 10);
  CHECK(clipped == doctest::Approx(cfg.lr * 1e-3).epsilon(1e-3));
  CHECK(step_norm(1e9) == free);
}

TEST_CASE("config checks") {
  DaLossConfig cfg;
  cfg.lambda_ent = -1;
  CHECK_THROWS(cfg.check());
  cfg = DaLossConfig{};
  cfg.epochs = 0;
  CHECK_THROWS(cfg.check());
  cfg = DaLossConfig{};
  cfg.grad_clip = -1;
  CHECK_THROWS(cfg.check());
  CHECK(da_mode_from_string("two_stage") == DaMode::TwoStage);
  CHECK_THROWS(da_mode_from_string("three_stage"));
}
