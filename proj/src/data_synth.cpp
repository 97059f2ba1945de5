#include "evoada/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

#include "evoada/rng.hpp"

namespace evoada {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kJitter = kPi / 6;  // per-sample orientation jitter, 30 degrees

// Texture of class k: stripes for even k, checkers for odd k, with the
// frequency stepping every second class. All classes share the base
// orientation, so a rotated target keeps each class's structure but moves it
// off the orientations seen in training.
struct Texture {
  double frequency;  // cycles across the image width
  bool checker;
};

Texture texture_of(std::size_t k) { return {2.0 + 1.5 * static_cast<double>(k / 2), k % 2 == 1}; }

// Blob centre of class k: known classes sit on a circle of radius 2, extra
// (unknown) classes on an outer ring of radius 4, offset by half a step.
std::pair<double, double> blob_centre(std::size_t k, std::size_t known) {
  if (k < known) {
    const double a = 2 * kPi * static_cast<double>(k) / static_cast<double>(known);
    return {2.0 * std::cos(a), 2.0 * std::sin(a)};
  }
  const double a = 2 * kPi * (static_cast<double>(k - known) + 0.5) / static_cast<double>(known);
  return {4.0 * std::cos(a), 4.0 * std::sin(a)};
}

struct DomainShift {
  double rotation = 0;  // radians
  double brightness = 0;
  double noise = 0;
};

void render_texture(const DatasetSpec& spec, std::size_t k, const DomainShift& shift, Rng& rng,
                    float* out) {
  const Texture tex = texture_of(k);
  const double phase = rng.uniform(-kPi / 4, kPi / 4);
  const double amp = 0.4 * rng.uniform(0.8, 1.2);
  const double angle = rng.uniform(-kJitter, kJitter) + shift.rotation;
  const double cy = (static_cast<double>(spec.height) - 1) / 2;
  const double cx = (static_cast<double>(spec.width) - 1) / 2;
  const double omega = 2 * kPi * tex.frequency / static_cast<double>(spec.width);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const std::size_t plane = spec.height * spec.width;
  for (std::size_t y = 0; y < spec.height; ++y)
    for (std::size_t x = 0; x < spec.width; ++x) {
      const double u = static_cast<double>(x) - cx, v = static_cast<double>(y) - cy;
      const double along = u * ca + v * sa, across = -u * sa + v * ca;
      double s = std::sin(omega * along + phase);
      if (tex.checker) s *= std::sin(omega * across + phase);
      const double base = 0.5 + amp * s + shift.brightness;
      for (std::size_t c = 0; c < spec.channels; ++c)
        out[c * plane + y * spec.width + x] =
            static_cast<float>(base + shift.noise * rng.normal());
    }
}

// A 2-D point painted as two flat half-images (left carries the first
// coordinate, right the second).
void render_blob(const DatasetSpec& spec, std::size_t k, const DomainShift& shift, Rng& rng,
                 float* out) {
  auto [mx, my] = blob_centre(k, spec.num_classes);
  const double px = mx + 0.5 * rng.normal(), py = my + 0.5 * rng.normal();
  const double cr = std::cos(shift.rotation), sr = std::sin(shift.rotation);
  const double qx = cr * px - sr * py, qy = sr * px + cr * py;
  const std::size_t plane = spec.height * spec.width;
  for (std::size_t y = 0; y < spec.height; ++y)
    for (std::size_t x = 0; x < spec.width; ++x) {
      const double value = 0.25 * (x < spec.width / 2 ? qx : qy) + shift.brightness;
      for (std::size_t c = 0; c < spec.channels; ++c)
        out[c * plane + y * spec.width + x] =
            static_cast<float>(value + shift.noise * rng.normal());
    }
}

// Interleaved class order: sample i belongs to classes[i % classes.size()].
std::vector<float> render_domain(const DatasetSpec& spec, const std::vector<std::size_t>& classes,
                                 const DomainShift& shift, std::uint64_t seed,
                                 std::vector<int>& labels) {
  Rng rng(seed);
  const std::size_t n = classes.size() * spec.samples_per_class, size = spec.image_size();
  std::vector<float> images(n * size);
  labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = classes[i % classes.size()];
    labels[i] = static_cast<int>(k);
    if (spec.task == TaskKind::TexturedGrid)
      render_texture(spec, k, shift, rng, images.data() + i * size);
    else
      render_blob(spec, k, shift, rng, images.data() + i * size);
  }
  return images;
}

}  // namespace

std::string to_string(TaskKind t) { return t == TaskKind::TexturedGrid ? "textured_grid" : "blobs2d"; }

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Closed: return "closed";
    case Variant::Partial: return "partial";
    case Variant::Open: return "open";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "textured_grid") return TaskKind::TexturedGrid;
  if (s == "blobs2d" || s == "blobs2d_as_image") return TaskKind::Blobs2d;
  throw std::invalid_argument("unknown task '" + s + "'");
}

Variant variant_from_string(const std::string& s) {
  if (s == "closed") return Variant::Closed;
  if (s == "partial") return Variant::Partial;
  if (s == "open") return Variant::Open;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

void DatasetSpec::check() const {
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  if (samples_per_class < 1) throw std::invalid_argument("samples_per_class must be >= 1");
  if (channels < 1 || height < 2 || width < 2)
    throw std::invalid_argument("image must be at least 1x2x2");
  if (source_noise < 0 || target_noise < 0) throw std::invalid_argument("noise must be >= 0");
  switch (variant) {
    case Variant::Closed:
      if (!kept_classes.empty() || unknown_classes != 0)
        throw std::invalid_argument("closed variant takes no kept or unknown classes");
      break;
    case Variant::Partial: {
      const std::set<std::size_t> kept(kept_classes.begin(), kept_classes.end());
      if (kept.size() != kept_classes.size())
        throw std::invalid_argument("partial variant: duplicate kept class");
      if (kept.empty() || kept.size() >= num_classes)
        throw std::invalid_argument("partial variant must keep a strict, non-empty subset");
      if (*kept.rbegin() >= num_classes)
        throw std::invalid_argument("partial variant: kept class out of range");
      if (unknown_classes != 0) throw std::invalid_argument("partial variant has no unknowns");
      break;
    }
    case Variant::Open:
      if (unknown_classes < 1) throw std::invalid_argument("open variant needs unknown classes");
      if (!kept_classes.empty()) throw std::invalid_argument("open variant keeps all classes");
      break;
  }
}

DatasetPair generate(const DatasetSpec& spec) {
  spec.check();
  DatasetPair pair;
  pair.spec = spec;

  std::vector<std::size_t> source_classes(spec.num_classes);
  for (std::size_t k = 0; k < spec.num_classes; ++k) source_classes[k] = k;
  std::vector<std::size_t> target_classes = source_classes;
  if (spec.variant == Variant::Partial) {
    target_classes = spec.kept_classes;
    std::sort(target_classes.begin(), target_classes.end());
  } else if (spec.variant == Variant::Open) {
    for (std::size_t u = 0; u < spec.unknown_classes; ++u)
      target_classes.push_back(spec.num_classes + u);
  }

  const DomainShift src{0, 0, spec.source_noise};
  const DomainShift tgt{spec.rotation_deg * kPi / 180.0, spec.brightness, spec.target_noise};
  pair.source_images =
      render_domain(spec, source_classes, src, derive_seed(spec.seed, 1), pair.source_labels);
  std::vector<int> target_labels;
  pair.set_target_images(
      render_domain(spec, target_classes, tgt, derive_seed(spec.seed, 2), target_labels));
  for (auto& y : target_labels) y = std::min(y, pair.unknown_label());
  pair.hidden = AuditedLabels(std::move(target_labels));
  return pair;
}

double oracle_accuracy(std::span<const int> predictions, const DatasetPair& pair) {
  const auto& labels = pair.hidden.read();
  if (predictions.size() != labels.size())
    throw std::invalid_argument("oracle_accuracy: " + std::to_string(predictions.size()) +
                                " predictions for " + std::to_string(labels.size()) + " samples");
  if (labels.empty()) throw std::invalid_argument("oracle_accuracy: empty target");
  if (pair.spec.variant != Variant::Open) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(labels.size());
  }
  const std::size_t classes = pair.spec.num_classes + 1;
  std::vector<std::size_t> seen(classes, 0), hit(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++seen[labels[i]];
    hit[labels[i]] += predictions[i] == labels[i];
  }
  double sum = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c)
    if (seen[c]) {
      sum += static_cast<double>(hit[c]) / static_cast<double>(seen[c]);
      ++present;
    }
  return sum / static_cast<double>(present);
}

std::string export_dataset(const DatasetPair& pair, bool include_hidden) {
  const auto& s = pair.spec;
  auto images = [&](std::span<const float> data, std::size_t n) {
    Tensor<float> t({static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(s.channels),
                     static_cast<std::uint32_t>(s.height), static_cast<std::uint32_t>(s.width)});
    std::copy(data.begin(), data.end(), t.data.begin());
    return t;
  };
  auto labels = [](const std::vector<int>& y) {
    Tensor<float> t({static_cast<std::uint32_t>(y.size())});
    for (std::size_t i = 0; i < y.size(); ++i) t.data[i] = static_cast<float>(y[i]);
    return t;
  };
  std::vector<NamedTensor> arrays;
  arrays.push_back({"source.images", images(pair.source_images, pair.source_size())});
  arrays.push_back({"source.labels", labels(pair.source_labels)});
  arrays.push_back({"target.images", images(pair.target_images(), pair.target_size())});
  if (include_hidden) arrays.push_back({"target.labels", labels(pair.hidden.read())});
  return write_weight_blob(arrays);
}

}  // namespace evoada
