#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evoada/backbone.hpp"
#include "evoada/data_synth.hpp"
#include "evoada/estimator.hpp"
#include "evoada/rng.hpp"
#include "evoada/search_space.hpp"
#include "evoada/uda.hpp"

namespace evoada {

enum class Status : std::uint8_t {
  Active = 0,
  MatureBudget,
  MatureConverged,
  DroppedNegativeTransfer,
  DroppedPoorPseudo,
  DroppedDiverged,
};

std::string to_string(Status s);
Status status_from_string(const std::string& s);
inline bool is_mature(Status s) { return s == Status::MatureBudget || s == Status::MatureConverged; }
inline bool is_dropped(Status s) { return s >= Status::DroppedNegativeTransfer; }

enum class Origin : std::uint8_t { Init = 0, Crossover, Mutate, Refill };
std::string to_string(Origin o);

struct Provenance {
  Origin origin = Origin::Init;
  std::vector<std::uint64_t> parents;
  /// "init", "crossover(3,7)", "mutate(5)", "refill"
  std::string str() const;
  bool operator==(const Provenance&) const = default;
};

struct HistoryEntry {
  std::size_t generation = 0;
  PEReport report;
  bool below_median = false;  // pseudo_quality under that generation's median
  bool operator==(const HistoryEntry&) const = default;
};

struct Individual {
  std::uint64_t id = 0;
  AttentionGenome genome;
  std::uint64_t seed = 0;
  NetworkWeights<float> weights;  // empty once archived
  std::vector<HistoryEntry> history;
  Status status = Status::Active;
  std::size_t age = 0;  // generations trained
  Provenance provenance;
  std::size_t attention_params = 0;

  double fitness() const { return history.empty() ? 0.0 : history.back().report.total; }
};

struct EvoConfig {
  std::size_t K = 20;
  std::size_t T = 30;
  double tr_acc = 0.95;
  std::size_t T_d = 5;
  double top_frac = 0.5;
  std::size_t epochs_per_generation = 2;
  std::uint64_t stem_seed = 0;
  std::uint64_t master_seed = 0;
  std::size_t retrain_epochs = 20;
  std::size_t retrain_seeds = 3;
  std::size_t random_epochs = 10;  // per random-search candidate
  std::size_t workers = 1;
  void check() const;
};

/// Everything a search needs besides the data.
struct SearchContext {
  BackboneSpec spec;
  SpaceParams space;
  DaLossConfig da;
  EstimatorConfig est;
  EvoConfig evo;
};

/// Uniform per-slot crossover: slot j comes from b where mask[j] is set.
AttentionGenome crossover_with_mask(const AttentionGenome& a, const AttentionGenome& b,
                                    const std::vector<bool>& mask);
std::vector<bool> crossover_mask(std::size_t slots, Rng& rng);
AttentionGenome crossover(const AttentionGenome& a, const AttentionGenome& b, Rng& rng);

/// Half the time one slot gets a fresh uniform gene, otherwise two distinct
/// slots swap genes (always the replace branch when P < 2).
AttentionGenome mutate(const AttentionGenome& g, const SpaceParams& space, Rng& rng);

/// Criteria in order (i) source accuracy above tr_acc, (iii) pseudo_quality
/// below the population median for T_d consecutive generations, (ii) age
/// reaching T. An individual whose L^PE has not improved for 2 T_d
/// generations is archived as converged. pop_median_pq applies to the
/// latest history entry; earlier entries use their stored flags.
Status early_stop_check(const Individual& ind, double pop_median_pq, const EvoConfig& cfg);

/// Per-individual seed: derive_seed(master_seed, id).
std::uint64_t individual_seed(std::uint64_t master_seed, std::uint64_t id);

/// Fitness order: total L^PE, then fewer attention parameters, then lower id.
bool fitter(const Individual& a, const Individual& b);

/// Best-so-far record for the search curve.
struct CurvePoint {
  std::size_t generation = 0;
  double best_total = 0;
  std::uint64_t best_id = 0;
  AttentionGenome best_genome;
  std::size_t snapshot = 0;  // index into EvoState::snapshots
};

struct EvoState {
  std::size_t generation = 0;  // next generation to run
  std::vector<Individual> population;
  std::vector<Individual> archive;
  Rng rng;
  std::uint64_t next_id = 0;
  std::uint64_t epochs_used = 0;
  std::vector<CurvePoint> curve;
  std::vector<NetworkWeights<float>> snapshots;  // weights of each new best
  std::string log;                               // JSONL so far
  std::vector<std::size_t> population_sizes;     // after each generation
  bool finished = false;                         // survivors archived, run over
};

/// K fresh individuals (provenance init), ids 0..K-1.
EvoState init_population(const SearchContext& ctx, const std::string& config_digest = "");

/// One generation of the algorithm; appends its log lines.
void generation_step(EvoState& state, const SearchContext& ctx, const DatasetPair& data);

/// Archived individuals sorted by fitness (best first).
std::vector<const Individual*> ranked_archive(const EvoState& state);
/// Up to n distinct genomes from the archive, best first.
std::vector<AttentionGenome> best_genomes(const EvoState& state, std::size_t n);

struct RunOptions {
  std::string checkpoint_path;  // empty: no checkpoints
  std::string log_path;         // empty: log kept in memory only
  std::optional<std::size_t> stop_after;  // stop once this many generations are done
  bool resume = false;
  std::string config_digest;
};

struct RunResult {
  EvoState state;
  bool completed = false;
};

/// Runs generations up to T (or stop_after), checkpointing after each one.
/// Evaluated survivors are archived as mature(budget) when the run ends.
RunResult run(const SearchContext& ctx, const DatasetPair& data, const RunOptions& opts = {});

/// Checkpoint ("EVOC") round trip.
std::string write_checkpoint(const EvoState& state, const SearchContext& ctx,
                             const std::string& config_digest);
EvoState read_checkpoint(std::string_view bytes, const SearchContext& ctx,
                         const std::string& config_digest);

struct RetrainResult {
  std::vector<double> accuracies;  // per seed; NaN when diverged
  std::vector<bool> diverged;
  double mean = 0;
  double sd = 0;  // sample standard deviation, 0 for a single seed
  bool any_diverged = false;
};

/// Trains from scratch once per seed and reports the oracle target accuracy.
/// Diverged seeds are flagged and left out of mean and sd.
RetrainResult retrain(const AttentionGenome& genome, const SearchContext& ctx,
                      const DatasetPair& data, const std::vector<std::uint64_t>& seeds,
                      std::size_t epochs);

/// The retrain seeds used by the CLI and acceptance: derive_seed(master, 1000 + i).
std::vector<std::uint64_t> retrain_seeds(std::uint64_t master_seed, std::size_t n);

struct RandomCandidate {
  std::uint64_t id = 0;
  AttentionGenome genome;
  std::uint64_t epochs_used = 0;  // cumulative after this candidate
  PEReport report;
  bool diverged = false;
  double best_total = 0;  // best so far
};

struct RandomSearchResult {
  std::vector<RandomCandidate> trajectory;
  std::uint64_t epochs_used = 0;
  std::string log;
};

/// Samples, trains and estimates random genomes until budget_epochs are
/// spent; the last candidate gets whatever budget remains.
RandomSearchResult random_search(const SearchContext& ctx, const DatasetPair& data,
                                 std::uint64_t budget_epochs, const std::string& config_digest = "");
std::vector<AttentionGenome> best_genomes(const RandomSearchResult& r, std::size_t n);

inline constexpr int kRunLogVersion = 1;

}  // namespace evoada
