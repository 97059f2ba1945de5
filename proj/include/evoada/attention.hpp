#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "evoada/backbone_spec.hpp"
#include "evoada/rng.hpp"
#include "evoada/search_space.hpp"
#include "evoada/tensor.hpp"

namespace evoada {

inline constexpr std::size_t kSpatialKernel = 7;

/// Learnable weights of one attention slot, resolved against its insertion
/// site. Tensor order per kind:
///   SE   : fc1.weight [g,w,C/g], fc1.bias [g,w], fc2.weight [g,C/g,w], fc2.bias [g,C/g]
///   CBAM : the four SE tensors (shared channel MLP), spatial.weight [2,7,7], spatial.bias [1]
///   GSoP : reduce.weight [g,w,C/g], reduce.bias [g,w], channel_fc.weight [g,C/g,w*w],
///          channel_fc.bias [g,C/g], spatial_fc.weight [H*W,w*w], spatial_fc.bias [H*W]
/// Identity has no tensors.
template <typename T>
struct AttentionParams {
  AttentionKind kind = AttentionKind::Identity;
  std::size_t channels = 0;
  std::size_t inner_width = 0;
  std::size_t groups = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Tensor<T>> tensors;

  std::size_t parameter_count() const;
  std::vector<std::string> tensor_names() const;

  /// Same geometry, all tensors zero.
  AttentionParams zeros_like() const;

  template <typename U>
  AttentionParams<U> cast() const {
    AttentionParams<U> out;
    out.kind = kind;
    out.channels = channels;
    out.inner_width = inner_width;
    out.groups = groups;
    out.height = height;
    out.width = width;
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }
};

/// Zero-filled parameters with the shapes for (kind, width, groups) at site.
/// Throws ShapeError when groups does not divide the site's channel count.
template <typename T>
AttentionParams<T> make_attention_params(AttentionKind kind, std::size_t inner_width,
                                         std::size_t groups, const SlotSite& site);

template <typename T>
AttentionParams<T> make_slot_params(const SlotGene& gene, const SpaceParams& space,
                                    const SlotSite& site) {
  if (gene.is_identity()) return make_attention_params<T>(AttentionKind::Identity, 0, 1, site);
  return make_attention_params<T>(gene.kind, space.widths[gene.width_idx],
                                  space.groups[gene.group_idx], site);
}

/// Initial bias of every sigmoid gate: sigmoid(3) is about 0.95, so a fresh
/// module starts close to the identity map.
inline constexpr double kGateBiasInit = 3.0;

/// uniform(-a, a) with a = sqrt(1 / fan_in) for weights and hidden biases;
/// the bias feeding each sigmoid gate starts at kGateBiasInit.
template <typename T>
void init_attention_params(AttentionParams<T>& p, Rng& rng);

/// Intermediate values kept by a forward pass for the backward pass.
template <typename T>
struct AttentionCache {
  AttentionKind kind = AttentionKind::Identity;
  FeatureMap<T> x;              // module input
  FeatureMap<T> x1;             // after the channel stage (CBAM, GSoP)
  Buffer<T> pooled;        // SE/CBAM avg pool [C,N]; GSoP reduced Z [g*w, N*P]
  Buffer<T> pooled_max;    // CBAM max pool [C,N]
  std::vector<std::size_t> argmax;     // CBAM channel-stage max position [C,N]
  Buffer<T> hidden;        // SE/CBAM pre-ReLU hidden (avg path) [g*w, N]
  Buffer<T> hidden_max;    // CBAM pre-ReLU hidden (max path)
  Buffer<T> channel_gate;  // [C,N]
  Buffer<T> cov;           // GSoP channel covariance, per group [g, w*w, N]
  Buffer<T> spatial_in;    // CBAM [2,N,P] mean/max maps; GSoP centred pooled Q [C, N*w]
  std::vector<std::size_t> spatial_argmax;  // CBAM channel argmax [N,P]
  Buffer<T> spatial_cov;   // GSoP [w*w, N]
  Buffer<T> spatial_gate;  // [N,P]
};

template <typename T>
FeatureMap<T> se_apply(const FeatureMap<T>& x, const AttentionParams<T>& p,
                       AttentionCache<T>* cache = nullptr);
template <typename T>
FeatureMap<T> cbam_apply(const FeatureMap<T>& x, const AttentionParams<T>& p,
                         AttentionCache<T>* cache = nullptr);
template <typename T>
FeatureMap<T> gsop_apply(const FeatureMap<T>& x, const AttentionParams<T>& p,
                         AttentionCache<T>* cache = nullptr);

/// Dispatch on p.kind; Identity returns x unchanged.
template <typename T>
FeatureMap<T> slot_apply(const FeatureMap<T>& x, const AttentionParams<T>& p,
                         AttentionCache<T>* cache = nullptr);

/// Backpropagates dy through the module recorded in cache. Parameter
/// gradients are accumulated into grads (same geometry as p); returns dx.
template <typename T>
FeatureMap<T> slot_backward(const FeatureMap<T>& dy, const AttentionCache<T>& cache,
                            const AttentionParams<T>& p, AttentionParams<T>& grads);

/// Per-sample multiply-add count of the module at its site (pooling,
/// linear maps, covariance products and gating).
std::size_t attention_flops(AttentionKind kind, std::size_t channels, std::size_t inner_width,
                            std::size_t groups, std::size_t height, std::size_t width);

}  // namespace evoada
