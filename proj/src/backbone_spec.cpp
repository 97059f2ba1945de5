#include "evoada/backbone_spec.hpp"

#include <stdexcept>
#include <string>

namespace evoada {

namespace {

std::size_t conv_out(std::size_t in, std::size_t stride) {
  // 3x3 kernel, padding 1.
  return (in - 1) / stride + 1;
}

}  // namespace

std::size_t BackboneSpec::block_height(std::size_t b) const {
  std::size_t h = input_height;
  for (std::size_t i = 0; i <= b; ++i) h = conv_out(h, strides[i]);
  return h;
}

std::size_t BackboneSpec::block_width(std::size_t b) const {
  std::size_t w = input_width;
  for (std::size_t i = 0; i <= b; ++i) w = conv_out(w, strides[i]);
  return w;
}

std::vector<SlotSite> BackboneSpec::slot_sites() const {
  std::vector<SlotSite> sites;
  for (std::size_t b = first_slot_block(); b < num_blocks(); ++b)
    sites.push_back({b, channels[b], block_height(b), block_width(b)});
  return sites;
}

void BackboneSpec::check() const {
  if (channels.size() < 2) throw std::invalid_argument("backbone needs at least 2 blocks");
  if (strides.size() != channels.size())
    throw std::invalid_argument("backbone strides must have one entry per block");
  for (std::size_t c : channels)
    if (c == 0) throw std::invalid_argument("backbone channel counts must be positive");
  for (std::size_t s : strides)
    if (s != 1 && s != 2) throw std::invalid_argument("backbone strides must be 1 or 2");
  if (input_channels == 0 || input_height == 0 || input_width == 0)
    throw std::invalid_argument("backbone input shape must be positive");
  if (num_classes == 0) throw std::invalid_argument("num_classes must be positive");
}

}  // namespace evoada
