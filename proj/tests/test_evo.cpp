#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "evoada/binary_io.hpp"
#include "evoada/errors.hpp"
#include "evoada/evo.hpp"

using namespace evoada;

namespace {

SearchContext small_context(std::size_t K = 4, std::size_t T = 3) {
  SearchContext ctx;
  ctx.evo.K = K;
  ctx.evo.T = T;
  ctx.evo.master_seed = 11;
  ctx.evo.stem_seed = 12;
  return ctx;
}

DatasetPair tiny_data() {
  DatasetSpec s;
  s.task = TaskKind::Blobs2d;
  s.samples_per_class = 12;
  s.seed = 5;
  return generate(s);
}

Individual with_history(std::initializer_list<std::pair<double, bool>> pq_below, double src = 0.5) {
  Individual ind;
  std::size_t g = 0;
  double total = 1.0;
  for (auto [pq, below] : pq_below) {
    HistoryEntry h;
    h.generation = g++;
    h.report.pseudo_quality = pq;
    h.report.source_acc = src;
    h.report.total = total;
    total -= 0.1;  // keeps improving, so no convergence archiving
    h.below_median = below;
    ind.history.push_back(h);
  }
  ind.age = ind.history.size();
  return ind;
}

}  // namespace

TEST_CASE("crossover") {
  const SpaceParams space;
  Rng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const auto a = sample_genome(space, rng), b = sample_genome(space, rng);
    const auto c = crossover(a, b, rng);
    for (std::size_t j = 0; j < c.size(); ++j) CHECK((c.slots[j] == a.slots[j] || c.slots[j] == b.slots[j]));
    CHECK(crossover(a, a, rng) == a);
    CHECK(crossover_with_mask(a, b, std::vector<bool>(a.size(), false)) == a);
    CHECK(crossover_with_mask(a, b, std::vector<bool>(a.size(), true)) == b);
  }
  CHECK_THROWS(crossover(AttentionGenome::all_identity(3), AttentionGenome::all_identity(4), rng));
}

TEST_CASE("mutation branches and slot frequencies") {
  const SpaceParams space;
  Rng rng(2);
  const AttentionGenome g{{decode_gene(1, space), decode_gene(7, space), decode_gene(20, space),
                           decode_gene(33, space)}};
  std::vector<double> hits(g.size(), 0);
  const int n = 10000;
  for (int t = 0; t < n; ++t) {
    const auto m = mutate(g, space, rng);
    std::size_t diff = 0;
    for (std::size_t j = 0; j < g.size(); ++j) diff += !(m.slots[j] == g.slots[j]);
    // either one slot replaced or a transposition of two distinct genes
    CHECK(diff <= 2);
    if (diff == 2) {
      auto a = encode(g, space), b = encode(m, space);
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      CHECK(a == b);
    }
    for (std::size_t j = 0; j < g.size(); ++j) hits[j] += !(m.slots[j] == g.slots[j]);
  }
  // each mutation touches 1.5 slots on average when the draw changes the
  // gene; counts per slot must be uniform within 3 sigma
  double total = 0;
  for (double h : hits) total += h;
  const double p = 1.0 / static_cast<double>(g.size());
  for (double h : hits) CHECK(std::abs(h - total * p) < 3 * std::sqrt(total * p * (1 - p)));

  const AttentionGenome one{{decode_gene(5, space)}};
  for (int t = 0; t < 50; ++t) CHECK(mutate(one, space, rng).size() == 1);
}

TEST_CASE("early stopping criteria") {
  EvoConfig cfg;
  cfg.T = 30;
  cfg.T_d = 5;
  auto neg = with_history({{0.9, false}}, 0.96);
  CHECK(early_stop_check(neg, 0.5, cfg) == Status::DroppedNegativeTransfer);
  auto edge = with_history({{0.9, false}}, 0.95);
  CHECK(early_stop_check(edge, 0.5, cfg) == Status::Active);

  // below the median for the latest plus 4 earlier generations: 5 in a row
  auto five = with_history({{0.9, false}, {0.1, true}, {0.1, true}, {0.1, true}, {0.1, true}, {0.1, false}});
  CHECK(early_stop_check(five, 0.5, cfg) == Status::DroppedPoorPseudo);
  auto four = with_history({{0.9, false}, {0.9, false}, {0.1, true}, {0.1, true}, {0.1, true}, {0.1, false}});
  CHECK(early_stop_check(four, 0.5, cfg) == Status::Active);
  // latest above the median breaks the streak
  CHECK(early_stop_check(five, 0.05, cfg) == Status::Active);

  auto old = with_history({{0.9, false}});
  old.age = 30;
  CHECK(early_stop_check(old, 0.5, cfg) == Status::MatureBudget);
  // order: negative transfer wins over age
  old.history.back().report.source_acc = 0.99;
  CHECK(early_stop_check(old, 0.5, cfg) == Status::DroppedNegativeTransfer);

  // no improvement for 2 T_d generations
  auto flat = with_history({{0.9, false}});
  for (int i = 0; i < 10; ++i) {
    auto h = flat.history.back();
    h.generation++;
    h.report.total += 0.01;
    flat.history.push_back(h);
  }
  flat.age = flat.history.size();
  CHECK(early_stop_check(flat, 0.5, cfg) == Status::MatureConverged);
  flat.history.pop_back();
  flat.age--;
  CHECK(early_stop_check(flat, 0.5, cfg) == Status::Active);
  CHECK_THROWS(early_stop_check(Individual{}, 0.5, cfg));
}

TEST_CASE("init_population") {
  auto ctx = small_context(20);
  const auto a = init_population(ctx);
  const auto b = init_population(ctx);
  REQUIRE(a.population.size() == 20);
  std::set<std::uint64_t> seeds;
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(a.population[i].status == Status::Active);
    CHECK(a.population[i].genome == b.population[i].genome);
    CHECK(a.population[i].weights.classifier_weight.data == b.population[i].weights.classifier_weight.data);
    CHECK(a.population[i].provenance.str() == "init");
  }
  for (std::uint64_t id = 0; id < (1u << 16); ++id) seeds.insert(individual_seed(ctx.evo.master_seed, id));
  CHECK(seeds.size() == (1u << 16));
}

TEST_CASE("config checks") {
  EvoConfig cfg;
  cfg.top_frac = 1;
  CHECK_THROWS(cfg.check());
  cfg = EvoConfig{};
  cfg.T_d = 0;
  CHECK_THROWS(cfg.check());
  cfg = EvoConfig{};
  cfg.tr_acc = 0;
  CHECK_THROWS(cfg.check());
}

TEST_CASE("generation steps keep K and are deterministic") {
  const auto data = tiny_data();
  auto ctx = small_context(5, 4);
  ctx.evo.epochs_per_generation = 1;
  auto r1 = run(ctx, data);
  auto r2 = run(ctx, data);
  CHECK(r1.completed);
  CHECK(r1.state.log == r2.state.log);
  REQUIRE(r1.state.population_sizes.size() == 4);
  for (auto s : r1.state.population_sizes) CHECK(s == 5);
  for (std::size_t g = 1; g < r1.state.curve.size(); ++g)
    CHECK(r1.state.curve[g].best_total <= r1.state.curve[g - 1].best_total);
  CHECK(r1.state.epochs_used == 4 * 5);
  CHECK(data.hidden.access_count() == 0);
  // every trained genome is in the log with its provenance
  std::size_t evals = 0;
  for (std::size_t p = 0; (p = r1.state.log.find("\"event\":\"eval\"", p)) != std::string::npos; ++p) ++evals;
  CHECK(evals == 20);
  const auto ranked = ranked_archive(r1.state);
  for (std::size_t i = 1; i < ranked.size(); ++i) CHECK(ranked[i - 1]->fitness() <= ranked[i]->fitness());

  // workers do not change the result
  ctx.evo.workers = 3;
  CHECK(run(ctx, data).state.log == r1.state.log);
}

TEST_CASE("smoke run T=1, K=2") {
  const auto data = tiny_data();
  auto ctx = small_context(2, 1);
  ctx.evo.epochs_per_generation = 1;
  const auto r = run(ctx, data);
  CHECK(r.completed);
  CHECK(r.state.archive.size() <= 2);
}

TEST_CASE("resume reproduces the uninterrupted trajectory") {
  const auto data = tiny_data();
  auto ctx = small_context(4, 4);
  ctx.evo.epochs_per_generation = 1;
  const auto dir = std::filesystem::temp_directory_path() / "evoada_test_resume";
  std::filesystem::create_directories(dir);
  RunOptions opts;
  opts.checkpoint_path = (dir / "ckpt.evoc").string();
  opts.log_path = (dir / "run.jsonl").string();
  opts.config_digest = "abc";
  const auto full = run(ctx, data, opts);
  const std::string full_log = read_file(opts.log_path);

  opts.stop_after = 2;
  const auto part = run(ctx, data, opts);
  CHECK_FALSE(part.completed);
  CHECK(part.state.generation == 2);
  opts.stop_after.reset();
  opts.resume = true;
  const auto resumed = run(ctx, data, opts);
  CHECK(resumed.completed);
  CHECK(read_file(opts.log_path) == full_log);
  CHECK(resumed.state.log == full.state.log);

  // a checkpoint for another config is refused
  opts.config_digest = "xyz";
  CHECK_THROWS_AS(run(ctx, data, opts), FormatError);
  CHECK_THROWS_AS(read_checkpoint("EVOX", ctx, "abc"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("retrain") {
  const auto data = tiny_data();
  auto ctx = small_context();
  const auto id = AttentionGenome::all_identity(4);
  const auto same = retrain(id, ctx, data, {7, 7, 7}, 2);
  CHECK(same.sd == 0.0);
  CHECK(same.accuracies[0] == same.accuracies[2]);

  const auto r = retrain(id, ctx, data, {1, 2, 3}, 2);
  CHECK(r.mean == doctest::Approx((r.accuracies[0] + r.accuracies[1] + r.accuracies[2]) / 3).epsilon(1e-15));

  // same code path as a direct training run
  auto w = build(ctx.spec, ctx.space, id, {ctx.evo.stem_seed, 2});
  DaLossConfig da = ctx.da;
  da.epochs = 2;
  Rng rng(derive_seed(2, 1));
  train(w, data, da, rng);
  CHECK(r.accuracies[1] == oracle_target_accuracy(w, data));
}

TEST_CASE("random search budget") {
  const auto data = tiny_data();
  auto ctx = small_context();
  ctx.evo.random_epochs = 2;
  CHECK(random_search(ctx, data, 0).trajectory.empty());
  const auto r = random_search(ctx, data, 7);
  CHECK(r.epochs_used == 7);
  CHECK(r.trajectory.size() == 4);
  for (std::size_t i = 1; i < r.trajectory.size(); ++i)
    CHECK(r.trajectory[i].best_total <= r.trajectory[i - 1].best_total);
  CHECK(data.hidden.access_count() == 0);
  CHECK(random_search(ctx, data, 7).log == r.log);
}
