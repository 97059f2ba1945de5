#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "evoada/backbone.hpp"
#include "evoada/data_synth.hpp"
#include "evoada/rng.hpp"

namespace evoada {

enum class DaMode : std::uint8_t { SingleStage, TwoStage };

std::string to_string(DaMode m);
DaMode da_mode_from_string(const std::string& s);

struct DaLossConfig {
  double lambda_ent = 0.1;
  double lambda_align = 1.0;
  DaMode mode = DaMode::TwoStage;
  std::size_t epochs = 2;  // per train() call
  std::size_t batch_size = 64;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Global L2 norm cap on each step's gradient; 0 disables clipping.
  double grad_clip = 2.0;

  void check() const;
  /// Name written into every report: "ce+mmd+ent" or "shot-im".
  std::string method_name() const;
};

// Loss terms on row-major logits [n, K]. When grad is non-null, scale times
// the gradient is added into it.

/// Mean softmax cross-entropy. Throws std::invalid_argument on a label
/// outside [0, K).
template <typename T>
double source_ce(std::span<const T> logits, std::size_t K, std::span<const int> labels,
                 T* grad = nullptr, double scale = 1.0);

/// Mean per-sample prediction entropy.
template <typename T>
double target_entropy(std::span<const T> logits, std::size_t K, T* grad = nullptr,
                      double scale = 1.0);

/// -H(mean prediction): the diversity half of information maximization.
template <typename T>
double target_diversity(std::span<const T> logits, std::size_t K, T* grad = nullptr,
                        double scale = 1.0);

/// Squared MMD between two feature batches [ns, F] and [nt, F] with a
/// Gaussian kernel exp(-d^2 / (2 s^2)), s the median pairwise distance of
/// the joint batch (held constant under differentiation). V-statistic, so
/// the value is >= 0 and exactly 0 for equal multisets. A positive
/// bandwidth replaces the median.
template <typename T>
double align_mmd(std::span<const T> fs, std::span<const T> ft, std::size_t F, T* grad_s = nullptr,
                 T* grad_t = nullptr, double scale = 1.0, double bandwidth = 0.0);

struct EpochStats {
  std::size_t stage = 1;
  double source_acc = 0;  // running accuracy on the source batches; NaN in stage 2
  double ce = 0;
  double mmd = 0;
  double entropy = 0;
  double diversity = 0;
  bool operator==(const EpochStats&) const = default;
};

struct TrainTrace {
  std::string method;
  std::vector<EpochStats> epochs;
  bool diverged = false;
  std::size_t steps = 0;
};

/// Trains w in place for cfg.epochs epochs.
///
/// single_stage: every step pairs equal-size source and target batches (the
/// shorter domain cycles) and minimizes ce + lambda_align*mmd +
/// lambda_ent*entropy. With both lambdas zero the target domain is never read.
/// two_stage: ceil(E/2) source-only epochs, then floor(E/2) target-only epochs
/// of lambda_ent*entropy + diversity with the classifier frozen.
///
/// Divergence stops training and sets trace.diverged; the weights are then
/// unspecified and should be discarded.
TrainTrace train(NetworkWeights<float>& w, const DatasetPair& data, const DaLossConfig& cfg,
                 Rng& rng);

/// argmax of each logit row, ties to the lower class.
std::vector<int> argmax_rows(std::span<const float> logits, std::size_t K);

}  // namespace evoada
