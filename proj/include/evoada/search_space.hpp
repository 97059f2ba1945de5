#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "evoada/backbone_spec.hpp"
#include "evoada/rng.hpp"

namespace evoada {

enum class AttentionKind : std::uint8_t { Identity = 0, SE, GSoP, CBAM };

std::string to_string(AttentionKind kind);
AttentionKind attention_kind_from_string(const std::string& name);

/// The searchable elements: attention kinds (Identity excluded), internal
/// widths and group counts, and the number of insertion slots.
struct SpaceParams {
  std::vector<AttentionKind> kinds{AttentionKind::SE, AttentionKind::GSoP, AttentionKind::CBAM};
  std::vector<std::size_t> widths{8, 16, 32, 64};
  std::vector<std::size_t> groups{1, 2, 4, 8};
  std::size_t num_slots = 4;

  /// Identity plus every (kind, width, group) combination.
  std::size_t choices_per_slot() const { return kinds.size() * widths.size() * groups.size() + 1; }

  void check() const;

  /// Sizes of the full ResNet-50 search.
  static SpaceParams resnet50_scale(std::size_t num_slots = 25);
};

/// One slot of the genome. Width and group are stored as indices into the
/// space's sets so a genome is independent of the absolute width scale.
struct SlotGene {
  AttentionKind kind = AttentionKind::Identity;
  std::uint8_t width_idx = 0;
  std::uint8_t group_idx = 0;

  bool is_identity() const { return kind == AttentionKind::Identity; }
  bool operator==(const SlotGene& o) const {
    if (kind != o.kind) return false;
    return is_identity() || (width_idx == o.width_idx && group_idx == o.group_idx);
  }

  static SlotGene identity() { return {}; }
};

struct AttentionGenome {
  std::vector<SlotGene> slots;

  std::size_t size() const { return slots.size(); }
  bool operator==(const AttentionGenome& o) const { return slots == o.slots; }

  static AttentionGenome all_identity(std::size_t num_slots) {
    return AttentionGenome{std::vector<SlotGene>(num_slots)};
  }
};

using BigInt = boost::multiprecision::cpp_int;

AttentionGenome sample_genome(const SpaceParams& space, Rng& rng);
/// sample_genome, redrawn until validate() passes.
AttentionGenome sample_valid_genome(const SpaceParams& space, const BackboneSpec& backbone,
                                    Rng& rng);

/// (|kinds|*|widths|*|groups| + 1)^P, exact.
BigInt cardinality(const SpaceParams& space);

/// Canonical code of one gene: 0 = Identity, then kinds x widths x groups
/// in lexicographic order starting at 1.
std::uint32_t encode_gene(const SlotGene& gene, const SpaceParams& space);
SlotGene decode_gene(std::uint32_t code, const SpaceParams& space, std::size_t slot = 0);

std::vector<std::uint32_t> encode(const AttentionGenome& genome, const SpaceParams& space);
/// Throws DecodeError naming the first offending slot.
AttentionGenome decode(const std::vector<std::uint32_t>& codes, const SpaceParams& space);

/// "3,0,12,1" form used in logs, reports and checkpoints.
std::string genome_to_string(const AttentionGenome& genome, const SpaceParams& space);
AttentionGenome genome_from_string(const std::string& text, const SpaceParams& space);

/// Human-readable form, e.g. "SE(w=8,g=2) | Id | CBAM(w=16,g=1) | Id".
std::string describe(const AttentionGenome& genome, const SpaceParams& space);

/// Checks every non-Identity slot against the channel count (group
/// divisibility) and spatial size (GSoP needs at least two positions) at
/// its insertion site. Returns all violations; empty means valid.
std::vector<std::string> validate(const AttentionGenome& genome, const SpaceParams& space,
                                  const BackboneSpec& backbone);

}  // namespace evoada
