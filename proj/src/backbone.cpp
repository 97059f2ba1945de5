#include "evoada/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "evoada/errors.hpp"
#include "evoada/rng.hpp"

namespace evoada {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapM = Eigen::Map<const RowMat<T>>;
template <typename T>
using CMapV = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

// Seed stream offsets under one individual's seed.
constexpr std::uint64_t kSlotStream = 100;
constexpr std::uint64_t kClassifierStream = 200;

template <typename T>
void im2col(const FeatureMap<T>& x, std::size_t stride, std::size_t oh, std::size_t ow,
            Buffer<T>& cols) {
  const std::size_t N = x.batch, OP = oh * ow, NP = N * OP;
  cols.assign(x.channels * 9 * NP, T(0));
  for (std::size_t c = 0; c < x.channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        T* row = cols.data() + ((c * 9) + ky * 3 + kx) * NP;
        for (std::size_t n = 0; n < N; ++n) {
          const T* in = x.plane(c, n);
          T* out = row + n * OP;
          for (std::size_t y = 0; y < oh; ++y) {
            const long iy = static_cast<long>(y * stride) + ky - 1;
            if (iy < 0 || iy >= static_cast<long>(x.height)) continue;
            for (std::size_t xx = 0; xx < ow; ++xx) {
              const long ix = static_cast<long>(xx * stride) + kx - 1;
              if (ix < 0 || ix >= static_cast<long>(x.width)) continue;
              out[y * ow + xx] = in[iy * x.width + ix];
            }
          }
        }
      }
}

template <typename T>
void col2im(const RowMat<T>& dcols, std::size_t stride, std::size_t oh, std::size_t ow,
            FeatureMap<T>& dx) {
  const std::size_t N = dx.batch, OP = oh * ow, NP = N * OP;
  for (std::size_t c = 0; c < dx.channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = dcols.data() + ((c * 9) + ky * 3 + kx) * NP;
        for (std::size_t n = 0; n < N; ++n) {
          T* out = dx.plane(c, n);
          const T* in = row + n * OP;
          for (std::size_t y = 0; y < oh; ++y) {
            const long iy = static_cast<long>(y * stride) + ky - 1;
            if (iy < 0 || iy >= static_cast<long>(dx.height)) continue;
            for (std::size_t xx = 0; xx < ow; ++xx) {
              const long ix = static_cast<long>(xx * stride) + kx - 1;
              if (ix < 0 || ix >= static_cast<long>(dx.width)) continue;
              out[iy * dx.width + ix] += in[y * ow + xx];
            }
          }
        }
      }
}

template <typename T>
bool finite(const Tensor<T>& t) {
  for (T v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

template <typename T>
std::vector<Tensor<T>*> NetworkWeights<T>::tensors() {
  std::vector<Tensor<T>*> out;
  for (std::size_t b = 0; b < conv_weight.size(); ++b) {
    out.push_back(&conv_weight[b]);
    out.push_back(&conv_bias[b]);
  }
  for (auto& s : slots)
    for (auto& t : s.tensors) out.push_back(&t);
  out.push_back(&classifier_weight);
  out.push_back(&classifier_bias);
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> NetworkWeights<T>::tensors() const {
  auto mut = const_cast<NetworkWeights*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

template <typename T>
std::vector<std::string> NetworkWeights<T>::tensor_names() const {
  std::vector<std::string> out;
  for (std::size_t b = 0; b < conv_weight.size(); ++b) {
    out.push_back("block" + std::to_string(b) + ".conv.weight");
    out.push_back("block" + std::to_string(b) + ".conv.bias");
  }
  for (std::size_t j = 0; j < slots.size(); ++j)
    for (const auto& n : slots[j].tensor_names())
      out.push_back("slot" + std::to_string(j) + "." + to_string(slots[j].kind) + "." + n);
  out.push_back("classifier.weight");
  out.push_back("classifier.bias");
  return out;
}

template <typename T>
std::size_t NetworkWeights<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* t : tensors()) n += t->size();
  return n;
}

template <typename T>
std::size_t NetworkWeights<T>::attention_parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : slots) n += s.parameter_count();
  return n;
}

template <typename T>
NetworkWeights<T> NetworkWeights<T>::zeros_like() const {
  NetworkWeights out = *this;
  for (auto* t : out.tensors()) t->zero();
  return out;
}

template <typename T>
bool NetworkWeights<T>::all_finite() const {
  for (const auto* t : tensors())
    if (!finite(*t)) return false;
  return true;
}

void init_block(NetworkWeights<float>& w, std::size_t b, std::uint64_t seed) {
  Rng rng(derive_seed(seed, b));
  auto& k = w.conv_weight[b];
  // Fan-in counts only the taps that land inside the zero-padded input,
  // averaged over output positions; on 2x2 and 4x4 maps most of the 3x3
  // window is padding.
  const auto& spec = w.spec;
  const long ih = static_cast<long>(b == 0 ? spec.input_height : spec.block_height(b - 1));
  const long iw = static_cast<long>(b == 0 ? spec.input_width : spec.block_width(b - 1));
  const long stride = static_cast<long>(spec.strides[b]);
  const long oh = static_cast<long>(spec.block_height(b)), ow = static_cast<long>(spec.block_width(b));
  long taps = 0;
  for (long y = 0; y < oh; ++y)
    for (long x = 0; x < ow; ++x)
      for (long ky = -1; ky <= 1; ++ky)
        for (long kx = -1; kx <= 1; ++kx) {
          const long iy = y * stride + ky, ix = x * stride + kx;
          taps += iy >= 0 && iy < ih && ix >= 0 && ix < iw;
        }
  const double fan_in =
      static_cast<double>(k.shape[1]) * static_cast<double>(taps) / static_cast<double>(oh * ow);
  const double sd = std::sqrt(2.0 / fan_in);
  for (auto& v : k.data) v = static_cast<float>(sd * rng.normal());
  w.conv_bias[b].zero();
}

AttentionParams<float> init_slot(const BackboneSpec& spec, const SpaceParams& space,
                                 const SlotGene& gene, std::size_t slot, std::uint64_t seed) {
  const auto site = spec.slot_sites().at(slot);
  auto p = make_slot_params<float>(gene, space, site);
  Rng rng(derive_seed(seed, kSlotStream + slot));
  init_attention_params(p, rng);
  return p;
}

NetworkWeights<float> build(const BackboneSpec& spec, const SpaceParams& space,
                            const AttentionGenome& genome, InitSeeds seeds) {
  spec.check();
  const auto errors = validate(genome, space, spec);
  if (!errors.empty()) {
    std::string msg = "invalid genome:";
    for (const auto& e : errors) msg += " " + e + ";";
    throw std::invalid_argument(msg);
  }
  NetworkWeights<float> w;
  w.spec = spec;
  for (std::size_t b = 0; b < spec.num_blocks(); ++b) {
    const auto cout = static_cast<std::uint32_t>(spec.channels[b]);
    const auto cin = static_cast<std::uint32_t>(spec.block_in_channels(b));
    w.conv_weight.emplace_back(std::vector<std::uint32_t>{cout, cin, 3, 3});
    w.conv_bias.emplace_back(std::vector<std::uint32_t>{cout});
    init_block(w, b, b < spec.first_slot_block() ? seeds.stem : seeds.individual);
  }
  for (std::size_t j = 0; j < genome.size(); ++j)
    w.slots.push_back(init_slot(spec, space, genome.slots[j], j, seeds.individual));
  const auto classes = static_cast<std::uint32_t>(spec.num_classes);
  const auto feat = static_cast<std::uint32_t>(spec.feature_dim());
  w.classifier_weight = Tensor<float>({classes, feat});
  w.classifier_bias = Tensor<float>({classes});
  Rng rng(derive_seed(seeds.individual, kClassifierStream));
  const double a = std::sqrt(1.0 / feat);
  for (auto& v : w.classifier_weight.data) v = static_cast<float>(rng.uniform(-a, a));
  return w;
}

template <typename T>
ForwardResult<T> forward(const NetworkWeights<T>& w, std::span<const T> images, std::size_t n,
                         bool keep_cache) {
  const auto& spec = w.spec;
  const std::size_t C0 = spec.input_channels, H0 = spec.input_height, W0 = spec.input_width;
  if (images.size() != n * C0 * H0 * W0)
    throw ShapeError("forward: expected " + std::to_string(n) + " images of " +
                     std::to_string(C0) + "x" + std::to_string(H0) + "x" + std::to_string(W0));
  if (n == 0) throw ShapeError("forward: empty batch");

  ForwardResult<T> res;
  auto& cache = res.cache;
  cache.batch = n;
  FeatureMap<T> x(C0, n, H0, W0);
  const std::size_t plane = H0 * W0;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < C0; ++c)
      std::copy_n(images.data() + (s * C0 + c) * plane, plane, x.plane(c, s));

  Buffer<T> cols;
  for (std::size_t b = 0; b < spec.num_blocks(); ++b) {
    const std::size_t oh = spec.block_height(b), ow = spec.block_width(b);
    const std::size_t cout = spec.channels[b], K = x.channels * 9, NP = n * oh * ow;
    im2col(x, spec.strides[b], oh, ow, cols);
    FeatureMap<T> out(cout, n, oh, ow);
    MapM<T> O(out.data.data(), cout, NP);
    O.noalias() = CMapM<T>(w.conv_weight[b].ptr(), cout, K) * CMapM<T>(cols.data(), K, NP);
    O.colwise() += CMapV<T>(w.conv_bias[b].ptr(), cout);
    O = O.cwiseMax(T(0));
    if (keep_cache) cache.cols.push_back(std::move(cols));
    if (b >= spec.first_slot_block()) {
      const std::size_t j = b - spec.first_slot_block();
      AttentionCache<T> ac;
      FeatureMap<T> y = slot_apply(out, w.slots[j], keep_cache ? &ac : nullptr);
      if (keep_cache) {
        cache.activations.push_back(std::move(out));
        cache.attention.push_back(std::move(ac));
      }
      x = std::move(y);
    } else {
      if (keep_cache) cache.activations.push_back(out);
      x = std::move(out);
    }
  }

  const std::size_t F = x.channels, P = x.positions(), K = spec.num_classes;
  res.features.assign(n * F, T(0));
  for (std::size_t c = 0; c < F; ++c)
    for (std::size_t s = 0; s < n; ++s) {
      const T* p = x.plane(c, s);
      T acc = 0;
      for (std::size_t i = 0; i < P; ++i) acc += p[i];
      res.features[s * F + c] = acc / T(P);
    }
  res.logits.assign(n * K, T(0));
  MapM<T> L(res.logits.data(), n, K);
  L.noalias() = CMapM<T>(res.features.data(), n, F) *
                CMapM<T>(w.classifier_weight.ptr(), K, F).transpose();
  L.rowwise() += CMapV<T>(w.classifier_bias.ptr(), K).transpose();
  if (keep_cache) cache.last = std::move(x);
  return res;
}

template <typename T>
void backward(const NetworkWeights<T>& w, const ForwardResult<T>& fwd, std::span<const T> dlogits,
              std::span<const T> dfeatures, NetworkWeights<T>& grads) {
  const auto& spec = w.spec;
  const auto& cache = fwd.cache;
  if (cache.cols.size() != spec.num_blocks()) throw ShapeError("backward: forward cache missing");
  const std::size_t n = cache.batch, F = spec.feature_dim(), K = spec.num_classes;
  if (dlogits.size() != n * K) throw ShapeError("backward: dlogits shape mismatch");
  if (!dfeatures.empty() && dfeatures.size() != n * F)
    throw ShapeError("backward: dfeatures shape mismatch");

  CMapM<T> dL(dlogits.data(), n, K);
  CMapM<T> feats(fwd.features.data(), n, F);
  MapM<T>(grads.classifier_weight.ptr(), K, F).noalias() += dL.transpose() * feats;
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grads.classifier_bias.ptr(), K) +=
      dL.colwise().sum().transpose();
  RowMat<T> dfeat = dL * CMapM<T>(w.classifier_weight.ptr(), K, F);
  if (!dfeatures.empty()) dfeat += CMapM<T>(dfeatures.data(), n, F);

  const auto& last = cache.last;
  FeatureMap<T> d(last.channels, n, last.height, last.width);
  const std::size_t P = last.positions();
  for (std::size_t c = 0; c < F; ++c)
    for (std::size_t s = 0; s < n; ++s) {
      const T v = dfeat(s, c) / T(P);
      T* p = d.plane(c, s);
      for (std::size_t i = 0; i < P; ++i) p[i] = v;
    }

  for (std::size_t bi = spec.num_blocks(); bi-- > 0;) {
    const auto& act = cache.activations[bi];
    if (bi >= spec.first_slot_block()) {
      const std::size_t j = bi - spec.first_slot_block();
      d = slot_backward(d, cache.attention[j], w.slots[j], grads.slots[j]);
    }
    for (std::size_t i = 0; i < d.data.size(); ++i)
      if (!(act.data[i] > T(0))) d.data[i] = T(0);
    const std::size_t cout = spec.channels[bi], cin = spec.block_in_channels(bi);
    const std::size_t Kc = cin * 9, NP = n * act.positions();
    CMapM<T> dO(d.data.data(), cout, NP);
    CMapM<T> cols(cache.cols[bi].data(), Kc, NP);
    MapM<T>(grads.conv_weight[bi].ptr(), cout, Kc).noalias() += dO * cols.transpose();
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grads.conv_bias[bi].ptr(), cout) +=
        dO.rowwise().sum();
    if (bi == 0) break;
    RowMat<T> dcols = CMapM<T>(w.conv_weight[bi].ptr(), cout, Kc).transpose() * dO;
    const auto& prev = cache.activations[bi - 1];
    FeatureMap<T> dx(cin, n, prev.height, prev.width);
    col2im(dcols, spec.strides[bi], act.height, act.width, dx);
    d = std::move(dx);
  }
}

Inference infer(const NetworkWeights<float>& w, std::span<const float> images, std::size_t n,
                std::size_t chunk) {
  const std::size_t size = w.spec.input_channels * w.spec.input_height * w.spec.input_width;
  if (images.size() != n * size) throw ShapeError("infer: image buffer does not hold n images");
  Inference out;
  out.count = n;
  out.features.reserve(n * w.spec.feature_dim());
  out.logits.reserve(n * w.spec.num_classes);
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    const auto r = forward<float>(w, images.subspan(start * size, m * size), m, false);
    out.features.insert(out.features.end(), r.features.begin(), r.features.end());
    out.logits.insert(out.logits.end(), r.logits.begin(), r.logits.end());
  }
  return out;
}

std::size_t network_flops(const BackboneSpec& spec, const SpaceParams& space,
                          const AttentionGenome& genome) {
  std::size_t total = 0;
  for (std::size_t b = 0; b < spec.num_blocks(); ++b)
    total += spec.channels[b] * spec.block_in_channels(b) * 9 * spec.block_height(b) *
             spec.block_width(b);
  const auto sites = spec.slot_sites();
  for (std::size_t j = 0; j < genome.size() && j < sites.size(); ++j) {
    const auto& g = genome.slots[j];
    if (g.is_identity()) continue;
    total += attention_flops(g.kind, sites[j].channels, space.widths[g.width_idx],
                             space.groups[g.group_idx], sites[j].height, sites[j].width);
  }
  total += spec.feature_dim() * spec.num_classes;
  return total;
}

std::size_t attention_parameter_count(const BackboneSpec& spec, const SpaceParams& space,
                                      const AttentionGenome& genome) {
  std::size_t total = 0;
  const auto sites = spec.slot_sites();
  for (std::size_t j = 0; j < genome.size() && j < sites.size(); ++j)
    total += make_slot_params<float>(genome.slots[j], space, sites[j]).parameter_count();
  return total;
}

std::size_t network_parameter_count(const BackboneSpec& spec, const SpaceParams& space,
                                    const AttentionGenome& genome) {
  std::size_t total = 0;
  for (std::size_t b = 0; b < spec.num_blocks(); ++b)
    total += spec.channels[b] * spec.block_in_channels(b) * 9 + spec.channels[b];
  total += spec.feature_dim() * spec.num_classes + spec.num_classes;
  return total + attention_parameter_count(spec, space, genome);
}

template <typename T>
void sgd_update(std::span<T> weights, std::span<const T> grads, std::span<T> velocity,
                const SgdConfig& cfg) {
  if (weights.size() != grads.size() || weights.size() != velocity.size())
    throw ShapeError("sgd_update: size mismatch");
  const T lr = static_cast<T>(cfg.lr), mom = static_cast<T>(cfg.momentum),
          wd = static_cast<T>(cfg.weight_decay);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!std::isfinite(grads[i])) throw DivergedError("non-finite gradient");
    velocity[i] = mom * velocity[i] + grads[i] + wd * weights[i];
    weights[i] -= lr * velocity[i];
    if (!std::isfinite(weights[i])) throw DivergedError("non-finite weight after update");
  }
}

Sgd::Sgd(const NetworkWeights<float>& like, SgdConfig cfg)
    : cfg_(cfg), velocity_(like.zeros_like()) {}

void Sgd::step(NetworkWeights<float>& w, const NetworkWeights<float>& grads,
               bool freeze_classifier) {
  auto wt = w.tensors();
  auto gt = grads.tensors();
  auto vt = velocity_.tensors();
  const std::size_t limit = freeze_classifier ? wt.size() - 2 : wt.size();
  for (std::size_t i = 0; i < limit; ++i)
    sgd_update<float>(wt[i]->span(), gt[i]->span(), vt[i]->span(), cfg_);
}

std::vector<NamedTensor> to_named_tensors(const NetworkWeights<float>& w) {
  std::vector<NamedTensor> out;
  const auto names = w.tensor_names();
  const auto ts = w.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) out.push_back({names[i], *ts[i]});
  return out;
}

void load_named_tensors(NetworkWeights<float>& w, const std::vector<NamedTensor>& arrays) {
  const auto names = w.tensor_names();
  auto ts = w.tensors();
  if (arrays.size() != ts.size())
    throw FormatError("weight blob has " + std::to_string(arrays.size()) + " arrays, expected " +
                      std::to_string(ts.size()));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (arrays[i].name != names[i])
      throw FormatError("weight blob array " + std::to_string(i) + " is '" + arrays[i].name +
                        "', expected '" + names[i] + "'");
    if (arrays[i].tensor.shape != ts[i]->shape)
      throw FormatError("weight blob array '" + names[i] + "' has the wrong shape");
    ts[i]->data = arrays[i].tensor.data;
  }
}

template struct NetworkWeights<float>;
template struct NetworkWeights<double>;
template ForwardResult<float> forward<float>(const NetworkWeights<float>&, std::span<const float>,
                                             std::size_t, bool);
template ForwardResult<double> forward<double>(const NetworkWeights<double>&,
                                               std::span<const double>, std::size_t, bool);
template void backward<float>(const NetworkWeights<float>&, const ForwardResult<float>&,
                              std::span<const float>, std::span<const float>,
                              NetworkWeights<float>&);
template void backward<double>(const NetworkWeights<double>&, const ForwardResult<double>&,
                               std::span<const double>, std::span<const double>,
                               NetworkWeights<double>&);
template void sgd_update<float>(std::span<float>, std::span<const float>, std::span<float>,
                                const SgdConfig&);
template void sgd_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                 const SgdConfig&);

}  // namespace evoada
