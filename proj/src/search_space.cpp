#include "evoada/search_space.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "evoada/errors.hpp"

namespace evoada {

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::Identity: return "Identity";
    case AttentionKind::SE: return "SE";
    case AttentionKind::GSoP: return "GSoP";
    case AttentionKind::CBAM: return "CBAM";
  }
  return "?";
}

AttentionKind attention_kind_from_string(const std::string& name) {
  for (auto k : {AttentionKind::Identity, AttentionKind::SE, AttentionKind::GSoP,
                 AttentionKind::CBAM})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown attention kind '" + name + "'");
}

void SpaceParams::check() const {
  if (kinds.empty() || widths.empty() || groups.empty())
    throw std::invalid_argument("search space sets must be non-empty");
  if (num_slots == 0) throw std::invalid_argument("search space needs at least one slot");
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (kinds[i] == AttentionKind::Identity)
      throw std::invalid_argument("Identity is implicit and may not be listed as a kind");
    for (std::size_t j = 0; j < i; ++j)
      if (kinds[j] == kinds[i]) throw std::invalid_argument("duplicate attention kind");
  }
  auto strictly_increasing = [](const std::vector<std::size_t>& v) {
    return v.front() > 0 && std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
  };
  if (!strictly_increasing(widths)) throw std::invalid_argument("widths must be strictly increasing");
  if (!strictly_increasing(groups)) throw std::invalid_argument("groups must be strictly increasing");
  if (widths.size() > 255 || groups.size() > 255)
    throw std::invalid_argument("at most 255 widths and groups");
}

SpaceParams SpaceParams::resnet50_scale(std::size_t num_slots) {
  SpaceParams p;
  p.widths = {256, 512, 1024, 2048};
  p.num_slots = num_slots;
  return p;
}

AttentionGenome sample_genome(const SpaceParams& space, Rng& rng) {
  AttentionGenome g;
  g.slots.reserve(space.num_slots);
  const std::size_t n = space.choices_per_slot();
  for (std::size_t i = 0; i < space.num_slots; ++i)
    g.slots.push_back(decode_gene(static_cast<std::uint32_t>(rng.uniform_below(n)), space, i));
  return g;
}

AttentionGenome sample_valid_genome(const SpaceParams& space, const BackboneSpec& backbone,
                                    Rng& rng) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    auto g = sample_genome(space, rng);
    if (validate(g, space, backbone).empty()) return g;
  }
  throw std::invalid_argument("search space has (almost) no genome valid for this backbone");
}

BigInt cardinality(const SpaceParams& space) {
  BigInt result = 1;
  const BigInt base = space.choices_per_slot();
  for (std::size_t i = 0; i < space.num_slots; ++i) result *= base;
  return result;
}

std::uint32_t encode_gene(const SlotGene& gene, const SpaceParams& space) {
  if (gene.is_identity()) return 0;
  auto it = std::find(space.kinds.begin(), space.kinds.end(), gene.kind);
  if (it == space.kinds.end())
    throw std::invalid_argument("gene kind " + to_string(gene.kind) + " not in search space");
  if (gene.width_idx >= space.widths.size() || gene.group_idx >= space.groups.size())
    throw std::invalid_argument("gene index out of range");
  const auto k = static_cast<std::uint32_t>(it - space.kinds.begin());
  return 1 + (k * space.widths.size() + gene.width_idx) * space.groups.size() + gene.group_idx;
}

SlotGene decode_gene(std::uint32_t code, const SpaceParams& space, std::size_t slot) {
  if (code >= space.choices_per_slot()) throw DecodeError(slot, code, space.choices_per_slot());
  if (code == 0) return SlotGene::identity();
  std::uint32_t rest = code - 1;
  SlotGene g;
  g.group_idx = static_cast<std::uint8_t>(rest % space.groups.size());
  rest /= space.groups.size();
  g.width_idx = static_cast<std::uint8_t>(rest % space.widths.size());
  g.kind = space.kinds[rest / space.widths.size()];
  return g;
}

std::vector<std::uint32_t> encode(const AttentionGenome& genome, const SpaceParams& space) {
  std::vector<std::uint32_t> codes;
  codes.reserve(genome.size());
  for (const auto& s : genome.slots) codes.push_back(encode_gene(s, space));
  return codes;
}

AttentionGenome decode(const std::vector<std::uint32_t>& codes, const SpaceParams& space) {
  AttentionGenome g;
  g.slots.reserve(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) g.slots.push_back(decode_gene(codes[i], space, i));
  return g;
}

std::string genome_to_string(const AttentionGenome& genome, const SpaceParams& space) {
  std::string out;
  for (std::size_t i = 0; i < genome.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(encode_gene(genome.slots[i], space));
  }
  return out;
}

AttentionGenome genome_from_string(const std::string& text, const SpaceParams& space) {
  std::vector<std::uint32_t> codes;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t\""));
    item.erase(item.find_last_not_of(" \t\"\r\n") + 1);
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      throw std::invalid_argument("genome string: '" + item + "' is not a non-negative integer");
    codes.push_back(static_cast<std::uint32_t>(std::stoul(item)));
  }
  if (codes.size() != space.num_slots)
    throw std::invalid_argument("genome string has " + std::to_string(codes.size()) +
                                " slots, expected " + std::to_string(space.num_slots));
  return decode(codes, space);
}

std::string describe(const AttentionGenome& genome, const SpaceParams& space) {
  std::string out;
  for (std::size_t i = 0; i < genome.size(); ++i) {
    const auto& s = genome.slots[i];
    if (i) out += " | ";
    if (s.is_identity()) {
      out += "Id";
    } else {
      out += to_string(s.kind) + "(w=" + std::to_string(space.widths[s.width_idx]) +
             ",g=" + std::to_string(space.groups[s.group_idx]) + ")";
    }
  }
  return out;
}

std::vector<std::string> validate(const AttentionGenome& genome, const SpaceParams& space,
                                  const BackboneSpec& backbone) {
  std::vector<std::string> errors;
  const auto sites = backbone.slot_sites();
  if (genome.size() != sites.size()) {
    errors.push_back("genome has " + std::to_string(genome.size()) + " slots, backbone has " +
                     std::to_string(sites.size()));
    return errors;
  }
  for (std::size_t i = 0; i < genome.size(); ++i) {
    const auto& gene = genome.slots[i];
    if (gene.is_identity()) continue;
    if (std::find(space.kinds.begin(), space.kinds.end(), gene.kind) == space.kinds.end()) {
      errors.push_back("slot " + std::to_string(i) + ": kind " + to_string(gene.kind) +
                       " not in search space");
      continue;
    }
    if (gene.width_idx >= space.widths.size() || gene.group_idx >= space.groups.size()) {
      errors.push_back("slot " + std::to_string(i) + ": width/group index out of range");
      continue;
    }
    const std::size_t g = space.groups[gene.group_idx];
    const auto& site = sites[i];
    if (site.channels % g != 0)
      errors.push_back("slot " + std::to_string(i) + ": group " + std::to_string(g) +
                       " does not divide " + std::to_string(site.channels));
    if (gene.kind == AttentionKind::GSoP && site.height * site.width < 2)
      errors.push_back("slot " + std::to_string(i) + ": GSoP needs at least 2 spatial positions");
  }
  return errors;
}

}  // namespace evoada
