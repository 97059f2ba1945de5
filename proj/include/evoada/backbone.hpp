#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "evoada/attention.hpp"
#include "evoada/backbone_spec.hpp"
#include "evoada/binary_io.hpp"
#include "evoada/search_space.hpp"
#include "evoada/tensor.hpp"

namespace evoada {

/// All learnable arrays of one network: per-block 3x3 convolutions, the
/// attention modules of the deep-half slots, and the linear classifier on
/// globally pooled features.
template <typename T>
struct NetworkWeights {
  BackboneSpec spec;
  std::vector<Tensor<T>> conv_weight;  // [Cout, Cin, 3, 3]
  std::vector<Tensor<T>> conv_bias;    // [Cout]
  std::vector<AttentionParams<T>> slots;
  Tensor<T> classifier_weight;  // [classes, features]
  Tensor<T> classifier_bias;    // [classes]

  /// Every tensor in a fixed order (blocks, slots, classifier).
  std::vector<Tensor<T>*> tensors();
  std::vector<const Tensor<T>*> tensors() const;
  std::vector<std::string> tensor_names() const;

  std::size_t parameter_count() const;
  std::size_t attention_parameter_count() const;

  NetworkWeights zeros_like() const;
  bool all_finite() const;

  template <typename U>
  NetworkWeights<U> cast() const {
    NetworkWeights<U> out;
    out.spec = spec;
    for (const auto& t : conv_weight) out.conv_weight.push_back(t.template cast<U>());
    for (const auto& t : conv_bias) out.conv_bias.push_back(t.template cast<U>());
    for (const auto& s : slots) out.slots.push_back(s.template cast<U>());
    out.classifier_weight = classifier_weight.template cast<U>();
    out.classifier_bias = classifier_bias.template cast<U>();
    return out;
  }
};

/// Seed streams used by build. Shallow-half convolutions come from the
/// run-wide stem seed so every individual starts from the same stem.
struct InitSeeds {
  std::uint64_t stem = 0;
  std::uint64_t individual = 0;
};

/// Deterministic initialization. Throws std::invalid_argument listing every
/// validation error when the genome does not fit the backbone.
NetworkWeights<float> build(const BackboneSpec& spec, const SpaceParams& space,
                            const AttentionGenome& genome, InitSeeds seeds);

/// Fresh parameters for one slot, drawn from the individual's slot stream.
AttentionParams<float> init_slot(const BackboneSpec& spec, const SpaceParams& space,
                                 const SlotGene& gene, std::size_t slot, std::uint64_t seed);

/// Kaiming-normal convolution weights for block b (fan-in over in-bounds
/// taps only), zero bias.
void init_block(NetworkWeights<float>& w, std::size_t b, std::uint64_t seed);

template <typename T>
struct ForwardCache {
  std::size_t batch = 0;
  std::vector<Buffer<T>> cols;        // im2col matrix per block [Cin*9, N*P_out]
  std::vector<FeatureMap<T>> activations;  // post-ReLU output per block (pre-attention)
  std::vector<AttentionCache<T>> attention;
  FeatureMap<T> last;                      // final block output (post-attention)
};

template <typename T>
struct ForwardResult {
  Buffer<T> features;  // [N, F] row-major
  Buffer<T> logits;    // [N, classes] row-major
  ForwardCache<T> cache;
};

/// images holds n samples laid out [n, C, H, W]. The cache is only filled
/// when keep_cache is true.
template <typename T>
ForwardResult<T> forward(const NetworkWeights<T>& w, std::span<const T> images, std::size_t n,
                         bool keep_cache = true);

/// Cache-free forward over a large set in fixed chunks. The chunking is
/// fixed so results do not depend on the caller.
struct Inference {
  std::size_t count = 0;
  Buffer<float> features;  // [n, F]
  Buffer<float> logits;    // [n, classes]
};
Inference infer(const NetworkWeights<float>& w, std::span<const float> images, std::size_t n,
                std::size_t chunk = 256);

/// Backpropagates dlogits [N, classes] and optional dfeatures [N, F]
/// (empty span when unused). Gradients are accumulated into grads.
template <typename T>
void backward(const NetworkWeights<T>& w, const ForwardResult<T>& fwd, std::span<const T> dlogits,
              std::span<const T> dfeatures, NetworkWeights<T>& grads);

/// Per-sample multiply-add count of a network (convolutions, attention,
/// classifier), from shapes alone.
std::size_t network_flops(const BackboneSpec& spec, const SpaceParams& space,
                          const AttentionGenome& genome);
std::size_t network_parameter_count(const BackboneSpec& spec, const SpaceParams& space,
                                    const AttentionGenome& genome);
std::size_t attention_parameter_count(const BackboneSpec& spec, const SpaceParams& space,
                                      const AttentionGenome& genome);

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Raised when gradients or updated weights stop being finite.
class DivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// v <- momentum * v + (g + decay * w); w <- w - lr * v.
template <typename T>
void sgd_update(std::span<T> weights, std::span<const T> grads, std::span<T> velocity,
                const SgdConfig& cfg);

/// Momentum SGD over a whole network. The velocity buffers live as long as
/// the optimizer.
class Sgd {
 public:
  Sgd(const NetworkWeights<float>& like, SgdConfig cfg);
  /// Skips the classifier when freeze_classifier is set. Throws
  /// DivergedError on non-finite gradients or results.
  void step(NetworkWeights<float>& w, const NetworkWeights<float>& grads,
            bool freeze_classifier = false);

 private:
  SgdConfig cfg_;
  NetworkWeights<float> velocity_;
};

std::vector<NamedTensor> to_named_tensors(const NetworkWeights<float>& w);
/// Copies arrays into w; names and shapes must match exactly.
void load_named_tensors(NetworkWeights<float>& w, const std::vector<NamedTensor>& arrays);

}  // namespace evoada
