#include "evoada/evo.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <stdexcept>
#include <thread>

#include "json.hpp"

#include "evoada/binary_io.hpp"
#include "evoada/errors.hpp"

namespace evoada {

namespace {

using json = nlohmann::ordered_json;

constexpr std::uint64_t kCoordinatorStream = ~0ull;
constexpr std::uint64_t kRandomSeedStream = ~0ull - 1;
constexpr std::uint64_t kRandomSampleStream = ~0ull - 2;
constexpr std::size_t kNoSnapshot = std::numeric_limits<std::size_t>::max();

PEReport nan_report() {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  PEReport r;
  r.l_ent = r.l_div = r.l_pse = r.total = r.source_acc = r.pseudo_quality = nan;
  return r;
}

json genome_json(const AttentionGenome& g, const SpaceParams& space) { return encode(g, space); }

json eval_line(std::size_t gen, const Individual& ind, const SpaceParams& space) {
  const auto& r = ind.history.back().report;
  json j;
  j["event"] = "eval";
  j["gen"] = gen;
  j["id"] = ind.id;
  j["provenance"] = ind.provenance.str();
  j["genome"] = genome_json(ind.genome, space);
  j["l_ent"] = r.l_ent;
  j["l_div"] = r.l_div;
  j["l_pse"] = r.l_pse;
  j["total"] = r.total;
  j["source_acc"] = r.source_acc;
  j["pseudo_quality"] = r.pseudo_quality;
  j["status"] = to_string(ind.status);
  j["age"] = ind.age;
  return j;
}

void append(std::string& log, const json& j) {
  log += j.dump();
  log += '\n';
}

std::string header(const char* kind, const std::string& digest) {
  json j;
  j["event"] = "header";
  j["schema"] = "evoada.runlog";
  j["version"] = kRunLogVersion;
  j["kind"] = kind;
  j["config_digest"] = digest;
  if (std::string(kind) == "search")
    j["early_stop"] = "checked after evaluation, before selection and mutation; order i, iii, ii";
  return j.dump() + "\n";
}

/// Runs fn(i) for i in [0, n) on up to workers threads.
template <typename F>
void parallel_for(std::size_t n, std::size_t workers, const F& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < workers; ++t)
    threads.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += workers) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : threads) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Evaluation {
  PEReport report;
  bool diverged = false;
};

Evaluation train_and_estimate(NetworkWeights<float>& w, std::uint64_t seed, std::uint64_t stream,
                              std::size_t epochs, const SearchContext& ctx,
                              const DatasetPair& data) {
  DaLossConfig da = ctx.da;
  da.epochs = epochs;
  Rng rng(derive_seed(seed, stream));
  Evaluation ev;
  ev.diverged = train(w, data, da, rng).diverged;
  if (!ev.diverged) {
    ev.report = estimate(w, data, ctx.est);
    ev.diverged = !std::isfinite(ev.report.total);
  }
  if (ev.diverged) ev.report = nan_report();
  return ev;
}

Individual fresh(EvoState& st, const SearchContext& ctx, Origin origin) {
  Individual ind;
  ind.id = st.next_id++;
  ind.seed = individual_seed(ctx.evo.master_seed, ind.id);
  ind.genome = sample_valid_genome(ctx.space, ctx.spec, st.rng);
  ind.weights = build(ctx.spec, ctx.space, ind.genome, {ctx.evo.stem_seed, ind.seed});
  ind.provenance.origin = origin;
  ind.attention_params = attention_parameter_count(ctx.spec, ctx.space, ind.genome);
  return ind;
}

Individual offspring(EvoState& st, const SearchContext& ctx, AttentionGenome genome,
                     Provenance prov) {
  Individual ind;
  ind.id = st.next_id++;
  ind.seed = individual_seed(ctx.evo.master_seed, ind.id);
  ind.genome = std::move(genome);
  ind.provenance = std::move(prov);
  ind.attention_params = attention_parameter_count(ctx.spec, ctx.space, ind.genome);
  return ind;
}

bool valid(const AttentionGenome& g, const SearchContext& ctx) {
  return validate(g, ctx.space, ctx.spec).empty();
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- checkpoint encoding ----

constexpr std::uint16_t kCheckpointVersion = 1;

void put_genome(ByteWriter& w, const AttentionGenome& g, const SpaceParams& space) {
  const auto codes = encode(g, space);
  w.u32(static_cast<std::uint32_t>(codes.size()));
  for (auto c : codes) w.u32(c);
}

AttentionGenome get_genome(ByteReader& r, const SpaceParams& space) {
  std::vector<std::uint32_t> codes(r.u32());
  for (auto& c : codes) c = r.u32();
  return decode(codes, space);
}

void put_report(ByteWriter& w, const PEReport& p) {
  for (double v : {p.l_ent, p.l_div, p.l_pse, p.total, p.source_acc, p.pseudo_quality}) w.f64(v);
}

PEReport get_report(ByteReader& r) {
  PEReport p;
  for (double* v : {&p.l_ent, &p.l_div, &p.l_pse, &p.total, &p.source_acc, &p.pseudo_quality})
    *v = r.f64();
  return p;
}

void put_individual(ByteWriter& w, const Individual& ind, const SpaceParams& space) {
  w.u64(ind.id);
  w.u64(ind.seed);
  put_genome(w, ind.genome, space);
  w.u8(static_cast<std::uint8_t>(ind.status));
  w.u64(ind.age);
  w.u8(static_cast<std::uint8_t>(ind.provenance.origin));
  w.u32(static_cast<std::uint32_t>(ind.provenance.parents.size()));
  for (auto p : ind.provenance.parents) w.u64(p);
  w.u32(static_cast<std::uint32_t>(ind.history.size()));
  for (const auto& h : ind.history) {
    w.u64(h.generation);
    w.u8(h.below_median);
    put_report(w, h.report);
  }
  const bool has_weights = !ind.weights.conv_weight.empty();
  w.u8(has_weights);
  if (has_weights) w.blob(write_weight_blob(to_named_tensors(ind.weights)));
}

NetworkWeights<float> load_weights(const std::string& blob, const AttentionGenome& g,
                                   const SearchContext& ctx) {
  auto w = build(ctx.spec, ctx.space, g, {0, 0});
  load_named_tensors(w, read_weight_blob(blob));
  return w;
}

Individual get_individual(ByteReader& r, const SearchContext& ctx) {
  Individual ind;
  ind.id = r.u64();
  ind.seed = r.u64();
  ind.genome = get_genome(r, ctx.space);
  const auto status = r.u8();
  if (status > static_cast<std::uint8_t>(Status::DroppedDiverged))
    throw FormatError("checkpoint: bad status " + std::to_string(status));
  ind.status = static_cast<Status>(status);
  ind.age = r.u64();
  const auto origin = r.u8();
  if (origin > static_cast<std::uint8_t>(Origin::Refill))
    throw FormatError("checkpoint: bad provenance " + std::to_string(origin));
  ind.provenance.origin = static_cast<Origin>(origin);
  ind.provenance.parents.resize(r.u32());
  for (auto& p : ind.provenance.parents) p = r.u64();
  ind.history.resize(r.u32());
  for (auto& h : ind.history) {
    h.generation = r.u64();
    h.below_median = r.u8() != 0;
    h.report = get_report(r);
  }
  if (r.u8()) ind.weights = load_weights(r.blob(), ind.genome, ctx);
  ind.attention_params = attention_parameter_count(ctx.spec, ctx.space, ind.genome);
  return ind;
}

}  // namespace

std::string to_string(Status s) {
  switch (s) {
    case Status::Active: return "active";
    case Status::MatureBudget: return "mature(budget)";
    case Status::MatureConverged: return "mature(converged)";
    case Status::DroppedNegativeTransfer: return "dropped(negative_transfer)";
    case Status::DroppedPoorPseudo: return "dropped(poor_pseudo)";
    case Status::DroppedDiverged: return "dropped(diverged)";
  }
  return "?";
}

Status status_from_string(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(Status::DroppedDiverged); ++i)
    if (to_string(static_cast<Status>(i)) == s) return static_cast<Status>(i);
  throw std::invalid_argument("unknown status '" + s + "'");
}

std::string to_string(Origin o) {
  switch (o) {
    case Origin::Init: return "init";
    case Origin::Crossover: return "crossover";
    case Origin::Mutate: return "mutate";
    case Origin::Refill: return "refill";
  }
  return "?";
}

std::string Provenance::str() const {
  std::string s = to_string(origin);
  if (parents.empty()) return s;
  s += '(';
  for (std::size_t i = 0; i < parents.size(); ++i) s += (i ? "," : "") + std::to_string(parents[i]);
  return s + ')';
}

void EvoConfig::check() const {
  if (K < 1) throw std::invalid_argument("K must be >= 1");
  if (T < 1) throw std::invalid_argument("T must be >= 1");
  if (!(tr_acc > 0 && tr_acc <= 1)) throw std::invalid_argument("tr_acc must be in (0, 1]");
  if (T_d < 1) throw std::invalid_argument("T_d must be >= 1");
  if (!(top_frac > 0 && top_frac < 1)) throw std::invalid_argument("top_frac must be in (0, 1)");
  if (epochs_per_generation < 1) throw std::invalid_argument("epochs_per_generation must be >= 1");
  if (retrain_epochs < 1) throw std::invalid_argument("retrain_epochs must be >= 1");
  if (retrain_seeds < 1) throw std::invalid_argument("retrain_seeds must be >= 1");
  if (random_epochs < 1) throw std::invalid_argument("random_epochs must be >= 1");
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
}

AttentionGenome crossover_with_mask(const AttentionGenome& a, const AttentionGenome& b,
                                    const std::vector<bool>& mask) {
  if (a.size() != b.size() || mask.size() != a.size())
    throw std::invalid_argument("crossover: slot counts differ (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  AttentionGenome child = a;
  for (std::size_t j = 0; j < a.size(); ++j)
    if (mask[j]) child.slots[j] = b.slots[j];
  return child;
}

std::vector<bool> crossover_mask(std::size_t slots, Rng& rng) {
  std::vector<bool> mask(slots);
  for (std::size_t j = 0; j < slots; ++j) mask[j] = rng.bernoulli(0.5);
  return mask;
}

AttentionGenome crossover(const AttentionGenome& a, const AttentionGenome& b, Rng& rng) {
  if (a.size() != b.size()) return crossover_with_mask(a, b, {});  // throws
  return crossover_with_mask(a, b, crossover_mask(a.size(), rng));
}

AttentionGenome mutate(const AttentionGenome& g, const SpaceParams& space, Rng& rng) {
  if (g.size() == 0) throw std::invalid_argument("mutate: empty genome");
  AttentionGenome out = g;
  const std::size_t P = g.size();
  if (P < 2 || rng.bernoulli(0.5)) {
    const std::size_t j = rng.uniform_below(P);
    out.slots[j] =
        decode_gene(static_cast<std::uint32_t>(rng.uniform_below(space.choices_per_slot())), space, j);
  } else {
    const std::size_t i = rng.uniform_below(P);
    std::size_t j = rng.uniform_below(P - 1);
    if (j >= i) ++j;
    std::swap(out.slots[i], out.slots[j]);
  }
  return out;
}

Status early_stop_check(const Individual& ind, double pop_median_pq, const EvoConfig& cfg) {
  if (ind.history.empty()) throw std::invalid_argument("early_stop_check: no history");
  const auto& last = ind.history.back().report;
  if (last.source_acc > cfg.tr_acc) return Status::DroppedNegativeTransfer;
  std::size_t streak = 0;
  if (last.pseudo_quality < pop_median_pq) {
    streak = 1;
    for (std::size_t i = ind.history.size() - 1; i-- > 0 && ind.history[i].below_median;) ++streak;
  }
  if (streak >= cfg.T_d) return Status::DroppedPoorPseudo;
  if (ind.age >= cfg.T) return Status::MatureBudget;
  std::size_t best = 0;
  for (std::size_t i = 1; i < ind.history.size(); ++i)
    if (ind.history[i].report.total < ind.history[best].report.total) best = i;
  if (ind.history.size() - 1 - best >= 2 * cfg.T_d) return Status::MatureConverged;
  return Status::Active;
}

std::uint64_t individual_seed(std::uint64_t master_seed, std::uint64_t id) {
  return derive_seed(master_seed, id);
}

bool fitter(const Individual& a, const Individual& b) {
  if (a.fitness() != b.fitness()) return a.fitness() < b.fitness();
  if (a.attention_params != b.attention_params) return a.attention_params < b.attention_params;
  return a.id < b.id;
}

EvoState init_population(const SearchContext& ctx, const std::string& config_digest) {
  ctx.evo.check();
  EvoState st;
  st.rng = Rng(derive_seed(ctx.evo.master_seed, kCoordinatorStream));
  for (std::size_t i = 0; i < ctx.evo.K; ++i) st.population.push_back(fresh(st, ctx, Origin::Init));
  st.log = header("search", config_digest);
  return st;
}

void generation_step(EvoState& st, const SearchContext& ctx, const DatasetPair& data) {
  const auto& cfg = ctx.evo;
  if (st.population.empty()) throw std::invalid_argument("generation_step: empty population");
  const std::size_t gen = st.generation;

  // (1)-(2) train and estimate, one task per individual
  auto& pop = st.population;
  std::vector<Evaluation> evals(pop.size());
  parallel_for(pop.size(), cfg.workers, [&](std::size_t i) {
    evals[i] = train_and_estimate(pop[i].weights, pop[i].seed, gen, cfg.epochs_per_generation, ctx,
                                  data);
  });
  st.epochs_used += pop.size() * cfg.epochs_per_generation;

  std::vector<double> pq;
  for (const auto& e : evals)
    if (!e.diverged) pq.push_back(e.report.pseudo_quality);
  const double med = median(pq);

  // early stopping, before selection and mutation
  for (std::size_t i = 0; i < pop.size(); ++i) {
    auto& ind = pop[i];
    ++ind.age;
    ind.history.push_back({gen, evals[i].report, evals[i].report.pseudo_quality < med});
    ind.status = evals[i].diverged ? Status::DroppedDiverged : early_stop_check(ind, med, cfg);
    append(st.log, eval_line(gen, ind, ctx.space));
  }

  // best-so-far curve
  const Individual* best = nullptr;
  for (const auto& ind : pop)
    if (ind.status != Status::DroppedDiverged && (!best || fitter(ind, *best))) best = &ind;
  CurvePoint point;
  if (!st.curve.empty()) point = st.curve.back();
  else {
    point.best_total = std::numeric_limits<double>::infinity();
    point.snapshot = kNoSnapshot;
  }
  point.generation = gen;
  if (best && best->fitness() < point.best_total) {
    point.best_total = best->fitness();
    point.best_id = best->id;
    point.best_genome = best->genome;
    point.snapshot = st.snapshots.size();
    st.snapshots.push_back(best->weights);
  }
  st.curve.push_back(point);

  std::vector<Individual> survivors;
  for (auto& ind : pop) {
    if (is_mature(ind.status)) {
      ind.weights = {};
      st.archive.push_back(std::move(ind));
    } else if (ind.status == Status::Active) {
      survivors.push_back(std::move(ind));
    }
  }
  pop.clear();
  std::sort(survivors.begin(), survivors.end(), fitter);

  // (3)-(5) the top survive and breed; the rest of the ranking is split
  // between crossover children (replacing the worst) and mutants
  const std::size_t s = survivors.size();
  const auto top_n = static_cast<std::size_t>(std::ceil(cfg.top_frac * static_cast<double>(cfg.K)));
  const std::size_t n_top = std::min(s, top_n);
  const std::size_t bottom = s - n_top;
  const std::size_t n_child = (bottom + 1) / 2;
  const std::size_t n_mut = bottom - n_child;

  std::vector<Individual> next;
  for (std::size_t i = 0; i < n_top; ++i) next.push_back(survivors[i]);
  for (std::size_t c = 0; c < n_child; ++c) {
    std::size_t ia = st.rng.uniform_below(n_top), ib = ia;
    if (n_top > 1) {
      ib = st.rng.uniform_below(n_top - 1);
      if (ib >= ia) ++ib;
    }
    if (ib < ia) std::swap(ia, ib);  // a is the higher-ranked parent
    const auto& a = survivors[ia];
    const auto& b = survivors[ib];
    const auto mask = crossover_mask(a.genome.size(), st.rng);
    auto child = offspring(st, ctx, crossover_with_mask(a.genome, b.genome, mask),
                           {Origin::Crossover, {a.id, b.id}});
    child.weights = a.weights;
    for (std::size_t j = 0; j < mask.size(); ++j)
      if (mask[j]) child.weights.slots[j] = b.weights.slots[j];
    next.push_back(std::move(child));
  }
  for (std::size_t m = 0; m < n_mut; ++m) {
    const auto& parent = survivors[n_top + m];
    AttentionGenome g = mutate(parent.genome, ctx.space, st.rng);
    for (int tries = 0; !valid(g, ctx) && tries < 100; ++tries) g = mutate(parent.genome, ctx.space, st.rng);
    if (!valid(g, ctx)) g = parent.genome;
    auto child = offspring(st, ctx, g, {Origin::Mutate, {parent.id}});
    child.weights = parent.weights;
    for (std::size_t j = 0; j < g.size(); ++j)
      if (!(g.slots[j] == parent.genome.slots[j]))
        child.weights.slots[j] = init_slot(ctx.spec, ctx.space, g.slots[j], j, child.seed);
    next.push_back(std::move(child));
  }

  // (7) refill
  if (next.empty()) {
    json note;
    note["event"] = "note";
    note["gen"] = gen;
    note["message"] = "all individuals left the population; refilled at random";
    append(st.log, note);
  }
  while (next.size() < cfg.K) next.push_back(fresh(st, ctx, Origin::Refill));
  pop = std::move(next);
  st.population_sizes.push_back(pop.size());
  st.generation = gen + 1;
}

std::vector<const Individual*> ranked_archive(const EvoState& st) {
  std::vector<const Individual*> out;
  for (const auto& a : st.archive) out.push_back(&a);
  std::sort(out.begin(), out.end(), [](const Individual* a, const Individual* b) { return fitter(*a, *b); });
  return out;
}

std::vector<AttentionGenome> best_genomes(const EvoState& st, std::size_t n) {
  std::vector<AttentionGenome> out;
  for (const auto* a : ranked_archive(st)) {
    if (out.size() >= n) break;
    if (std::find(out.begin(), out.end(), a->genome) == out.end()) out.push_back(a->genome);
  }
  return out;
}

std::string write_checkpoint(const EvoState& st, const SearchContext& ctx,
                             const std::string& config_digest) {
  ByteWriter w;
  w.raw("EVOC");
  w.u16(kCheckpointVersion);
  w.short_string(config_digest);
  w.u64(st.generation);
  w.u8(st.finished);
  w.blob(st.rng.serialize());
  w.u64(st.next_id);
  w.u64(st.epochs_used);
  w.u64(st.log.size());
  w.blob(st.log);
  w.u32(static_cast<std::uint32_t>(st.population_sizes.size()));
  for (auto v : st.population_sizes) w.u64(v);
  w.u32(static_cast<std::uint32_t>(st.population.size()));
  for (const auto& ind : st.population) put_individual(w, ind, ctx.space);
  w.u32(static_cast<std::uint32_t>(st.archive.size()));
  for (const auto& ind : st.archive) put_individual(w, ind, ctx.space);
  w.u32(static_cast<std::uint32_t>(st.curve.size()));
  for (const auto& c : st.curve) {
    w.u64(c.generation);
    w.f64(c.best_total);
    w.u64(c.best_id);
    put_genome(w, c.best_genome, ctx.space);
    w.u64(c.snapshot);
  }
  w.u32(static_cast<std::uint32_t>(st.snapshots.size()));
  for (std::size_t i = 0; i < st.snapshots.size(); ++i) {
    // the genome of a snapshot is the one of the first curve point using it
    w.blob(write_weight_blob(to_named_tensors(st.snapshots[i])));
  }
  return w.take();
}

EvoState read_checkpoint(std::string_view bytes, const SearchContext& ctx,
                         const std::string& config_digest) {
  ByteReader r(bytes);
  if (r.raw(4) != "EVOC") throw FormatError("not a checkpoint (missing EVOC header)");
  const auto version = r.u16();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported");
  const auto digest = r.short_string();
  if (digest != config_digest)
    throw FormatError("checkpoint was written for config " + digest + ", not " + config_digest);
  EvoState st;
  st.generation = r.u64();
  st.finished = r.u8() != 0;
  st.rng = Rng::deserialize(r.blob());
  st.next_id = r.u64();
  st.epochs_used = r.u64();
  const auto log_size = r.u64();
  st.log = r.blob();
  if (st.log.size() != log_size) throw FormatError("checkpoint: log length mismatch");
  st.population_sizes.resize(r.u32());
  for (auto& v : st.population_sizes) v = r.u64();
  st.population.resize(r.u32());
  for (auto& ind : st.population) ind = get_individual(r, ctx);
  st.archive.resize(r.u32());
  for (auto& ind : st.archive) ind = get_individual(r, ctx);
  st.curve.resize(r.u32());
  for (auto& c : st.curve) {
    c.generation = r.u64();
    c.best_total = r.f64();
    c.best_id = r.u64();
    c.best_genome = get_genome(r, ctx.space);
    c.snapshot = r.u64();
  }
  const std::size_t n_snap = r.u32();
  for (std::size_t i = 0; i < n_snap; ++i) {
    const auto blob = r.blob();
    const CurvePoint* owner = nullptr;
    for (const auto& c : st.curve)
      if (c.snapshot == i) {
        owner = &c;
        break;
      }
    if (!owner) throw FormatError("checkpoint: orphan weight snapshot " + std::to_string(i));
    st.snapshots.push_back(load_weights(blob, owner->best_genome, ctx));
  }
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes");
  return st;
}

RunResult run(const SearchContext& ctx, const DatasetPair& data, const RunOptions& opts) {
  ctx.evo.check();
  RunResult res;
  auto& st = res.state;
  if (opts.resume) {
    if (opts.checkpoint_path.empty()) throw std::invalid_argument("resume needs a checkpoint path");
    st = read_checkpoint(read_file(opts.checkpoint_path), ctx, opts.config_digest);
  } else {
    st = init_population(ctx, opts.config_digest);
  }
  auto save = [&] {
    if (!opts.log_path.empty()) write_file_atomic(opts.log_path, st.log);
    if (!opts.checkpoint_path.empty())
      write_file_atomic(opts.checkpoint_path, write_checkpoint(st, ctx, opts.config_digest));
  };
  while (!st.finished && st.generation < ctx.evo.T) {
    if (opts.stop_after && st.generation >= *opts.stop_after) {
      save();
      return res;
    }
    generation_step(st, ctx, data);
    save();
  }
  if (!st.finished) {
    // evaluated survivors end the global loop as mature(budget)
    for (auto& ind : st.population) {
      if (ind.history.empty()) continue;
      Individual a = ind;
      a.weights = {};
      a.status = Status::MatureBudget;
      json j;
      j["event"] = "archive";
      j["gen"] = st.generation - 1;
      j["id"] = a.id;
      j["status"] = to_string(a.status);
      j["total"] = a.fitness();
      append(st.log, j);
      st.archive.push_back(std::move(a));
    }
    st.finished = true;
    save();
  }
  res.completed = true;
  return res;
}

std::vector<std::uint64_t> retrain_seeds(std::uint64_t master_seed, std::size_t n) {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(derive_seed(master_seed, 1000 + i));
  return out;
}

RetrainResult retrain(const AttentionGenome& genome, const SearchContext& ctx,
                      const DatasetPair& data, const std::vector<std::uint64_t>& seeds,
                      std::size_t epochs) {
  if (seeds.empty()) throw std::invalid_argument("retrain: no seeds");
  RetrainResult out;
  DaLossConfig da = ctx.da;
  da.epochs = epochs;
  std::vector<double> ok;
  for (auto seed : seeds) {
    auto w = build(ctx.spec, ctx.space, genome, {ctx.evo.stem_seed, seed});
    Rng rng(derive_seed(seed, 1));
    const bool diverged = train(w, data, da, rng).diverged || !w.all_finite();
    out.diverged.push_back(diverged);
    if (diverged) {
      out.any_diverged = true;
      out.accuracies.push_back(std::numeric_limits<double>::quiet_NaN());
    } else {
      out.accuracies.push_back(oracle_target_accuracy(w, data));
      ok.push_back(out.accuracies.back());
    }
  }
  if (ok.empty()) {
    out.mean = out.sd = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  double sum = 0;
  for (double a : ok) sum += a;
  out.mean = sum / static_cast<double>(ok.size());
  if (ok.size() > 1) {
    double ss = 0;
    for (double a : ok) ss += (a - out.mean) * (a - out.mean);
    out.sd = std::sqrt(ss / static_cast<double>(ok.size() - 1));
  }
  return out;
}

RandomSearchResult random_search(const SearchContext& ctx, const DatasetPair& data,
                                 std::uint64_t budget_epochs, const std::string& config_digest) {
  ctx.evo.check();
  RandomSearchResult res;
  res.log = header("random_search", config_digest);
  Rng sampler(derive_seed(ctx.evo.master_seed, kRandomSampleStream));
  const std::uint64_t seed_root = derive_seed(ctx.evo.master_seed, kRandomSeedStream);
  double best = std::numeric_limits<double>::infinity();
  for (std::uint64_t id = 0; res.epochs_used < budget_epochs; ++id) {
    const std::size_t epochs =
        std::min<std::uint64_t>(ctx.evo.random_epochs, budget_epochs - res.epochs_used);
    RandomCandidate c;
    c.id = id;
    c.genome = sample_valid_genome(ctx.space, ctx.spec, sampler);
    const std::uint64_t seed = derive_seed(seed_root, id);
    auto w = build(ctx.spec, ctx.space, c.genome, {ctx.evo.stem_seed, seed});
    const auto ev = train_and_estimate(w, seed, 0, epochs, ctx, data);
    res.epochs_used += epochs;
    c.epochs_used = res.epochs_used;
    c.report = ev.report;
    c.diverged = ev.diverged;
    if (!c.diverged) best = std::min(best, c.report.total);
    c.best_total = best;

    json j;
    j["event"] = "eval";
    j["gen"] = id;
    j["id"] = id;
    j["provenance"] = "random";
    j["genome"] = genome_json(c.genome, ctx.space);
    j["l_ent"] = c.report.l_ent;
    j["l_div"] = c.report.l_div;
    j["l_pse"] = c.report.l_pse;
    j["total"] = c.report.total;
    j["source_acc"] = c.report.source_acc;
    j["pseudo_quality"] = c.report.pseudo_quality;
    j["status"] = to_string(c.diverged ? Status::DroppedDiverged : Status::Active);
    j["epochs"] = epochs;
    j["epochs_used"] = res.epochs_used;
    j["best_total"] = best;
    append(res.log, j);
    res.trajectory.push_back(std::move(c));
  }
  return res;
}

std::vector<AttentionGenome> best_genomes(const RandomSearchResult& r, std::size_t n) {
  std::vector<const RandomCandidate*> order;
  for (const auto& c : r.trajectory)
    if (!c.diverged) order.push_back(&c);
  std::stable_sort(order.begin(), order.end(), [](const RandomCandidate* a, const RandomCandidate* b) {
    return a->report.total < b->report.total;
  });
  std::vector<AttentionGenome> out;
  for (const auto* c : order) {
    if (out.size() >= n) break;
    if (std::find(out.begin(), out.end(), c->genome) == out.end()) out.push_back(c->genome);
  }
  return out;
}

}  // namespace evoada
