#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evoada/backbone.hpp"
#include "evoada/data_synth.hpp"
#include "evoada/uda.hpp"

namespace evoada {

/// Weights of the three L^PE terms (unweighted sum by default).
struct EstimatorConfig {
  double w_ent = 1.0;
  double w_div = 1.0;
  double w_pse = 1.0;
  void check() const;
};

struct PEReport {
  double l_ent = 0;
  double l_div = 0;
  double l_pse = 0;
  double total = 0;
  double source_acc = 0;
  double pseudo_quality = 0;
  /// Filled only by report phases, from the hidden labels.
  std::optional<double> oracle_target_acc;
  bool operator==(const PEReport&) const = default;
};

/// Row-wise softmax of logits [n, K] in double precision.
std::vector<double> softmax_rows(std::span<const float> logits, std::size_t K);

/// Mean entropy of the rows of probs [n, K]; 0 log 0 = 0. Throws
/// std::invalid_argument when a row does not sum to 1 within 1e-6.
double entropy_term(std::span<const double> probs, std::size_t K);

/// -H(mean row).
double diversity_term(std::span<const double> probs, std::size_t K);

/// Centroid pseudo-labels: soft centroids from probs, nearest centroid by
/// cosine distance, then one round of hard-label centroids and reassignment.
/// Ties go to the lower class. A class without mass keeps its previous
/// centroid.
std::vector<int> pseudo_labels(std::span<const double> features, std::size_t F,
                               std::span<const double> probs, std::size_t K);

/// Mean -log p_i[label_i]. Throws on a label outside [0, K).
double pseudo_ce_term(std::span<const double> probs, std::size_t K, std::span<const int> labels);

/// All PEReport fields except the oracle accuracy, from one pass over the
/// target (and one over the source for source_acc). Never reads hidden labels.
PEReport estimate(const NetworkWeights<float>& w, const DatasetPair& data,
                  const EstimatorConfig& cfg = {});

/// Target predictions for reporting. In the open variant a sample whose
/// normalized prediction entropy exceeds unknown_entropy is labeled unknown.
std::vector<int> predict_target(const NetworkWeights<float>& w, const DatasetPair& data,
                                double unknown_entropy = 0.5);

/// Hidden-label accuracy of predict_target (reads the audited labels).
double oracle_target_accuracy(const NetworkWeights<float>& w, const DatasetPair& data);

/// Spearman rho with average ranks for ties. The statistic is kept as exact
/// integers over doubled, centred ranks a_i = 2 R_i - (n + 1):
/// rho = num / sqrt(var_x * var_y).
struct SpearmanResult {
  long long num = 0;
  long long var_x = 0;
  long long var_y = 0;
  double rho = 0;  // NaN when either variance is zero
  bool degenerate() const { return var_x == 0 || var_y == 0; }
};

/// Doubled average ranks (2 * 1-based rank), integers even with ties.
std::vector<long long> doubled_ranks(std::span<const double> xs);

SpearmanResult spearman_exact(std::span<const double> xs, std::span<const double> ys);
/// Throws std::invalid_argument on length mismatch or fewer than 2 values.
double spearman(std::span<const double> xs, std::span<const double> ys);

struct StudyConfig {
  std::size_t num_genomes = 30;
  std::size_t epochs = 20;  // training budget per genome
  std::uint64_t seed = 0;
  std::uint64_t stem_seed = 0;
  /// When set, every sample uses this genome (degeneracy checks).
  std::optional<AttentionGenome> fixed_genome;
};

struct StudyRow {
  std::string genome;
  double source_acc = 0;
  double l_ent = 0;
  double l_div = 0;
  double l_pse = 0;
  double total = 0;
  double target_acc = 0;
  bool diverged = false;
};

struct StudyReport {
  std::string method;
  std::vector<StudyRow> rows;
  std::size_t used = 0;          // rows entering the correlations
  double rho_estimator = 0;      // rho(-L^PE, target_acc)
  double rho_source = 0;         // rho(source_acc, target_acc)
  bool degenerate = false;
  std::string summary;
};

/// Trains num_genomes random genomes from scratch and correlates both
/// selection signals with the oracle target accuracy. Diverged genomes are
/// dropped from both correlations. The training seed of a genome depends on
/// the study seed and the genome only, so identical genomes train identically.
StudyReport rank_correlation_study(const StudyConfig& cfg, const BackboneSpec& spec,
                                   const SpaceParams& space, const DaLossConfig& da,
                                   const EstimatorConfig& est, const DatasetPair& data);

struct HistogramRow {
  std::string genome;
  double target_acc = 0;  // NaN when training diverged
  bool diverged = false;
};

struct HistogramReport {
  std::vector<HistogramRow> rows;
  double baseline_acc = 0;  // all-Identity genome, same training recipe
};

/// Oracle target accuracy of num_genomes random genomes, each trained from
/// scratch for cfg.epochs with the study seeding, plus the all-Identity
/// baseline.
HistogramReport histogram_study(const StudyConfig& cfg, const BackboneSpec& spec,
                                const SpaceParams& space, const DaLossConfig& da,
                                const DatasetPair& data);

}  // namespace evoada
