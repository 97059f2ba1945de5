#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "evoada/evo.hpp"

namespace evoada {

inline constexpr int kCsvVersion = 1;

/// CSV with a schema line "# <schema> v<version> config_digest=<digest>"
/// followed by a header row and data rows. Fields never contain commas
/// (genomes are written with ';').
struct CsvTable {
  std::string schema;
  int version = kCsvVersion;
  std::string digest;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

std::string write_csv(const CsvTable& table);
/// Throws FormatError on a missing schema line, another schema, an unknown
/// version or ragged rows.
CsvTable read_csv(const std::string& text, const std::string& expected_schema);

/// Shortest round-trip decimal form; "nan" for NaN.
std::string format_number(double v);
/// Genome codes joined with ';' for CSV cells.
std::string genome_cell(const AttentionGenome& g, const SpaceParams& space);

struct RunLogSummary {
  std::string kind;
  std::string digest;
  std::size_t generations = 0;
  std::size_t evaluations = 0;
  double best_total = 0;  // NaN when nothing was evaluated
  std::vector<std::pair<std::size_t, double>> curve;  // generation, best so far
  std::map<std::string, std::size_t> status_counts;
  std::vector<std::pair<std::vector<std::uint32_t>, double>> best;  // distinct genomes, best first
};

/// Parses a RunLog (JSONL). Throws FormatError on malformed lines, a
/// missing header or an unknown version.
RunLogSummary summarize_runlog(const std::string& text, std::size_t top = 5);

/// Human-readable run summary: best genomes with parameter and FLOP deltas
/// against the all-Identity backbone, early stops by cause.
std::string render_summary(const RunLogSummary& s, const SearchContext& ctx);

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

std::string svg_line_chart(const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const std::vector<Series>& series);

/// Histogram of values with a dashed vertical line at baseline.
std::string svg_histogram(const std::vector<double>& values, double baseline, std::size_t bins,
                          const std::string& title, const std::string& xlabel);

}  // namespace evoada
