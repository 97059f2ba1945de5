#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evoada/binary_io.hpp"

namespace evoada {

enum class TaskKind : std::uint8_t { TexturedGrid, Blobs2d };
enum class Variant : std::uint8_t { Closed, Partial, Open };

std::string to_string(TaskKind t);
std::string to_string(Variant v);
TaskKind task_kind_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);

struct DatasetSpec {
  TaskKind task = TaskKind::TexturedGrid;
  std::size_t num_classes = 4;
  std::size_t samples_per_class = 200;  // per domain
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  // Target-domain shift.
  double rotation_deg = 30.0;
  double brightness = 0.3;
  // Per-domain pixel noise.
  double source_noise = 0.1;
  double target_noise = 0.1;
  Variant variant = Variant::Closed;
  std::vector<std::size_t> kept_classes;  // partial: target classes
  std::size_t unknown_classes = 0;        // open: extra target-only classes
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on inconsistent class sets or sizes.
  void check() const;
  std::size_t image_size() const { return channels * height * width; }
};

/// Relaxed atomic counter that copies by value, so holders stay copyable.
class AccessCounter {
 public:
  AccessCounter() = default;
  AccessCounter(const AccessCounter& o) : n_(o.get()) {}
  AccessCounter& operator=(const AccessCounter& o) {
    n_.store(o.get());
    return *this;
  }
  void bump() const { n_.fetch_add(1, std::memory_order_relaxed); }
  std::uint64_t get() const { return n_.load(std::memory_order_relaxed); }

 private:
  mutable std::atomic<std::uint64_t> n_{0};
};

/// Hidden target labels. Every read goes through read(), which bumps an
/// atomic counter, so a search can prove it never looked.
class AuditedLabels {
 public:
  AuditedLabels() = default;
  explicit AuditedLabels(std::vector<int> labels) : labels_(std::move(labels)) {}

  const std::vector<int>& read() const {
    reads_.bump();
    return labels_;
  }
  std::size_t size() const { return labels_.size(); }
  std::uint64_t access_count() const { return reads_.get(); }

 private:
  std::vector<int> labels_;
  AccessCounter reads_;
};

/// Labeled source images, unlabeled target images, and the hidden oracle.
/// Images are [n, C, H, W] float32. Target image reads are counted too, so
/// source-only training can be shown not to touch the target domain.
class DatasetPair {
 public:
  DatasetSpec spec;
  std::vector<float> source_images;
  std::vector<int> source_labels;
  AuditedLabels hidden;

  std::size_t source_size() const { return source_labels.size(); }
  std::size_t target_size() const { return hidden.size(); }
  std::span<const float> target_images() const {
    target_reads_.bump();
    return target_images_;
  }
  std::uint64_t target_access_count() const { return target_reads_.get(); }
  void set_target_images(std::vector<float> images) { target_images_ = std::move(images); }

  /// Label id used for target-only classes in the open variant.
  int unknown_label() const { return static_cast<int>(spec.num_classes); }

 private:
  std::vector<float> target_images_;
  AccessCounter target_reads_;
};

/// Deterministic in spec (including seed).
DatasetPair generate(const DatasetSpec& spec);

/// Plain accuracy for closed and partial variants; for the open variant the
/// mean of per-class accuracies over the classes present in the target,
/// with every unknown class pooled into one. Reads the hidden labels.
double oracle_accuracy(std::span<const int> predictions, const DatasetPair& pair);

/// Flat array export in the weight-blob container: source.images,
/// source.labels, target.images and (when include_hidden) target.labels.
std::string export_dataset(const DatasetPair& pair, bool include_hidden);

}  // namespace evoada
