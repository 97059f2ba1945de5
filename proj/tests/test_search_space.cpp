#include <cmath>
#include <set>

#include "doctest.h"
#include "evoada/errors.hpp"
#include "evoada/search_space.hpp"

using namespace evoada;

namespace {

SpaceParams desk_small() {
  SpaceParams s;
  s.widths = {8, 16};
  s.groups = {1, 2};
  s.num_slots = 4;
  return s;
}

}  // namespace

TEST_CASE("sample_genome with a two-choice space") {
  SpaceParams s;
  s.kinds = {AttentionKind::SE};
  s.widths = {8};
  s.groups = {1};
  s.num_slots = 2;
  Rng rng(0);
  const auto g = sample_genome(s, rng);
  REQUIRE(g.size() == 2);
  for (const auto& slot : g.slots) {
    CHECK((slot.is_identity() || (slot.kind == AttentionKind::SE && slot.width_idx == 0 &&
                                  slot.group_idx == 0)));
  }
}

TEST_CASE("sample_genome is deterministic for a given rng state") {
  const auto s = SpaceParams{};
  Rng a(42), b(42);
  for (int i = 0; i < 50; ++i) CHECK(sample_genome(s, a) == sample_genome(s, b));
}

TEST_CASE("sample_genome is reproducible across platforms (pinned codes)") {
  // Only integer arithmetic on the standard-defined mt19937_64 sequence is
  // involved, so these codes are fixed everywhere.
  Rng rng(2024);
  const auto g = sample_genome(SpaceParams{}, rng);
  const auto codes = encode(g, SpaceParams{});
  Rng again(2024);
  CHECK(encode(sample_genome(SpaceParams{}, again), SpaceParams{}) == codes);
  std::mt19937_64 raw(2024);
  std::vector<std::uint32_t> expected;
  for (int i = 0; i < 4; ++i) {
    std::uint64_t x = raw();
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % 49;
    while (x >= limit) x = raw();
    expected.push_back(static_cast<std::uint32_t>(x % 49));
  }
  CHECK(codes == expected);
}

TEST_CASE("slot frequencies are uniform over the 13 desk choices") {
  const auto s = desk_small();
  REQUIRE(s.choices_per_slot() == 13);
  Rng rng(11);
  const int samples = 10000;
  std::vector<std::vector<int>> counts(s.num_slots, std::vector<int>(13, 0));
  for (int i = 0; i < samples; ++i) {
    const auto codes = encode(sample_genome(s, rng), s);
    for (std::size_t j = 0; j < codes.size(); ++j) ++counts[j][codes[j]];
  }
  // Each count is binomial(n, 1/13); check within 3 sigma and the
  // chi-square statistic per slot against the 99.9% quantile for 12 dof.
  const double p = 1.0 / 13, mean = samples * p, sd = std::sqrt(samples * p * (1 - p));
  for (const auto& slot : counts) {
    double chi2 = 0;
    for (int c : slot) {
      CHECK(std::abs(c - mean) <= 3 * sd);
      chi2 += (c - mean) * (c - mean) / mean;
    }
    CHECK(chi2 < 32.91);
  }
}

TEST_CASE("cardinality") {
  SpaceParams full = SpaceParams::resnet50_scale(25);
  BigInt expected = 1;
  for (int i = 0; i < 25; ++i) expected *= 49;
  CHECK(cardinality(full) == expected);
  CHECK(cardinality(full).str() == "1798465042647412146620280340569649349251249");
  // about 1e42
  CHECK(cardinality(full) > BigInt("1000000000000000000000000000000000000000000"));
  CHECK(cardinality(full) < BigInt("10000000000000000000000000000000000000000000"));
  CHECK(cardinality(desk_small()) == 28561);
  SpaceParams tiny;
  tiny.kinds = {AttentionKind::SE};
  tiny.widths = {8};
  tiny.groups = {1};
  tiny.num_slots = 1;
  CHECK(cardinality(tiny) == 2);
}

TEST_CASE("cardinality matches exhaustive enumeration of distinct encodings") {
  for (std::size_t slots : {1u, 2u, 3u, 4u}) {
    auto s = desk_small();
    s.num_slots = slots;
    std::set<std::vector<std::uint32_t>> seen;
    std::vector<std::uint32_t> codes(slots, 0);
    const std::uint32_t n = static_cast<std::uint32_t>(s.choices_per_slot());
    while (true) {
      seen.insert(encode(decode(codes, s), s));
      std::size_t i = 0;
      while (i < slots && ++codes[i] == n) codes[i++] = 0;
      if (i == slots) break;
    }
    CHECK(BigInt(seen.size()) == cardinality(s));
  }
}

TEST_CASE("encode/decode") {
  const auto s = desk_small();
  CHECK(encode(AttentionGenome::all_identity(4), s) == std::vector<std::uint32_t>{0, 0, 0, 0});
  // Canonical order: kinds x widths x groups after Identity.
  CHECK(decode_gene(1, s) == SlotGene{AttentionKind::SE, 0, 0});
  CHECK(decode_gene(2, s) == SlotGene{AttentionKind::SE, 0, 1});
  CHECK(decode_gene(3, s) == SlotGene{AttentionKind::SE, 1, 0});
  CHECK(decode_gene(5, s) == SlotGene{AttentionKind::GSoP, 0, 0});
  CHECK(decode_gene(12, s) == SlotGene{AttentionKind::CBAM, 1, 1});

  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const auto g = sample_genome(s, rng);
    CHECK(decode(encode(g, s), s) == g);
  }

  try {
    decode({13}, s);
    FAIL("expected DecodeError");
  } catch (const DecodeError& e) {
    CHECK(e.slot() == 0);
    CHECK(std::string(e.what()).find("slot 0") != std::string::npos);
  }
  try {
    decode({0, 1, 99, 0}, s);
    FAIL("expected DecodeError");
  } catch (const DecodeError& e) {
    CHECK(e.slot() == 2);
  }
}

TEST_CASE("genome string form") {
  const SpaceParams s;
  const auto g = decode({0, 17, 48, 1}, s);
  CHECK(genome_to_string(g, s) == "0,17,48,1");
  CHECK(genome_from_string("0, 17,48,1", s) == g);
  CHECK_THROWS(genome_from_string("0,17,48", s));
  CHECK_THROWS(genome_from_string("0,x,48,1", s));
  CHECK_THROWS_AS(genome_from_string("0,49,0,0", s), DecodeError);
}

TEST_CASE("validate checks group divisibility against the insertion site") {
  SpaceParams s;
  s.kinds = {AttentionKind::SE, AttentionKind::CBAM};
  s.widths = {8};
  s.groups = {4, 8};
  s.num_slots = 1;

  BackboneSpec bb;
  bb.channels = {4, 16};
  bb.strides = {1, 1};
  AttentionGenome se{{SlotGene{AttentionKind::SE, 0, 0}}};
  CHECK(validate(se, s, bb).empty());

  bb.channels = {4, 12};
  AttentionGenome cbam{{SlotGene{AttentionKind::CBAM, 0, 1}}};
  const auto errs = validate(cbam, s, bb);
  REQUIRE(errs.size() == 1);
  CHECK(errs[0].find("group 8 does not divide 12") != std::string::npos);

  CHECK(validate(AttentionGenome::all_identity(1), s, bb).empty());
  BackboneSpec def;
  CHECK(validate(AttentionGenome::all_identity(4), SpaceParams{}, def).empty());
}

TEST_CASE("validate collects every violation") {
  SpaceParams s;
  s.groups = {1, 2, 4, 8, 16, 32};
  BackboneSpec bb;
  bb.channels = {8, 8, 12, 12};
  bb.strides = {1, 1, 1, 1};
  s.num_slots = 2;
  AttentionGenome g{{SlotGene{AttentionKind::SE, 0, 3}, SlotGene{AttentionKind::GSoP, 0, 5}}};
  CHECK(validate(g, s, bb).size() == 2);
}

TEST_CASE("space parameter checks") {
  SpaceParams s;
  CHECK_NOTHROW(s.check());
  s.widths = {16, 8};
  CHECK_THROWS(s.check());
  s = SpaceParams{};
  s.groups = {};
  CHECK_THROWS(s.check());
  s = SpaceParams{};
  s.num_slots = 0;
  CHECK_THROWS(s.check());
  s = SpaceParams{};
  s.kinds = {AttentionKind::SE, AttentionKind::Identity};
  CHECK_THROWS(s.check());
}
