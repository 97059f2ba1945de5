#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "evoada/data_synth.hpp"
#include "evoada/estimator.hpp"
#include "evoada/evo.hpp"

namespace evoada {

/// Sizes of the method studies run from the CLI.
struct StudySettings {
  std::size_t rank_genomes = 30;
  std::size_t histogram_genomes = 50;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
};

/// Every knob of a run. Text form: "[section]" headers and "key = value"
/// lines; '#' starts a comment. Lists are comma separated.
struct RunConfig {
  SearchContext search;  // space, backbone, da, estimator, evo
  DatasetSpec data;
  StudySettings study;
  std::string output_dir = "evoada_out";

  /// Cross-section consistency (image shape and class count shared by the
  /// backbone and the data, slot count). Throws ConfigError.
  void check() const;
};

/// Throws ConfigError naming the line and "section.key" on malformed lines,
/// unknown sections or keys, duplicates and bad values.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

/// Canonical text with every key; parse(emit(c)) == c field by field.
std::string emit_run_config(const RunConfig& cfg);

/// FNV-1a of the canonical text.
std::string config_digest(const RunConfig& cfg);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace evoada
