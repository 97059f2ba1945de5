#pragma once

#include <cstddef>
#include <vector>

namespace evoada {

/// Shape of one attention insertion point (the output of a deep-half block).
struct SlotSite {
  std::size_t block = 0;  // zero-based block index
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Fixed block structure of the convolutional backbone. Every block is a
/// 3x3 convolution (padding 1) followed by ReLU; attention slots sit after
/// the blocks of the deeper half.
struct BackboneSpec {
  std::vector<std::size_t> channels{8, 8, 16, 16, 32, 32, 64, 64};
  std::vector<std::size_t> strides{1, 2, 1, 2, 1, 2, 1, 1};
  std::size_t input_channels = 1;
  std::size_t input_height = 16;
  std::size_t input_width = 16;
  std::size_t num_classes = 4;

  std::size_t num_blocks() const { return channels.size(); }
  std::size_t first_slot_block() const { return num_blocks() - num_slots(); }
  std::size_t num_slots() const { return num_blocks() / 2; }
  std::size_t feature_dim() const { return channels.back(); }

  /// Output height/width of block b.
  std::size_t block_height(std::size_t b) const;
  std::size_t block_width(std::size_t b) const;
  std::size_t block_in_channels(std::size_t b) const {
    return b == 0 ? input_channels : channels[b - 1];
  }

  std::vector<SlotSite> slot_sites() const;

  /// Throws std::invalid_argument on inconsistent fields.
  void check() const;
};

}  // namespace evoada
