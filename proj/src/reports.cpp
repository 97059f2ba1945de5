#include "evoada/reports.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "evoada/errors.hpp"
#include "json.hpp"

namespace evoada {

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double v, int digits = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

Frame frame_for(double x0, double x1, double y0, double y1) {
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > y0)) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  return {x0, x1, y0, y1};
}

std::string axes(const Frame& f, const std::string& title, const std::string& xlabel,
                 const std::string& ylabel) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << escape_xml(title) << "</text>\n";
  const double bx = kLeft, by = kHeight - kBottom;
  os << "<line x1=\"" << bx << "\" y1=\"" << by << "\" x2=\"" << kWidth - kRight << "\" y2=\"" << by
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << bx << "\" y1=\"" << by << "\" x2=\"" << bx << "\" y2=\"" << kTop
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4, yv = f.y0 + (f.y1 - f.y0) * i / 4;
    os << "<text x=\"" << f.px(xv) << "\" y=\"" << by + 16 << "\" text-anchor=\"middle\">"
       << fixed(xv, 2) << "</text>\n";
    os << "<text x=\"" << bx - 6 << "\" y=\"" << f.py(yv) + 4 << "\" text-anchor=\"end\">"
       << fixed(yv, 3) << "</text>\n";
  }
  os << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 10
     << "\" text-anchor=\"middle\">" << escape_xml(xlabel) << "</text>\n";
  os << "<text x=\"16\" y=\"" << (kTop + kHeight - kBottom) / 2
     << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (kTop + kHeight - kBottom) / 2
     << ")\">" << escape_xml(ylabel) << "</text>\n";
  return os.str();
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string genome_cell(const AttentionGenome& g, const SpaceParams& space) {
  std::string s;
  const auto codes = encode(g, space);
  for (std::size_t i = 0; i < codes.size(); ++i) s += (i ? ";" : "") + std::to_string(codes[i]);
  return s;
}

std::string write_csv(const CsvTable& t) {
  std::string out = "# " + t.schema + " v" + std::to_string(t.version) +
                    " config_digest=" + t.digest + "\n";
  for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + t.columns[i];
  out += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + row[i];
    out += '\n';
  }
  return out;
}

CsvTable read_csv(const std::string& text, const std::string& expected_schema) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0)
    throw FormatError("csv: missing schema line");
  std::istringstream head(line.substr(2));
  std::string schema, version, digest;
  head >> schema >> version >> digest;
  if (schema != expected_schema)
    throw FormatError("csv: schema '" + schema + "', expected '" + expected_schema + "'");
  if (version != "v" + std::to_string(kCsvVersion))
    throw FormatError("csv: unsupported version '" + version + "'");
  if (digest.rfind("config_digest=", 0) != 0) throw FormatError("csv: missing config digest");
  CsvTable t;
  t.schema = schema;
  t.digest = digest.substr(14);
  if (!std::getline(in, line)) throw FormatError("csv: missing header row");
  t.columns = split_row(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split_row(line);
    if (row.size() != t.columns.size())
      throw FormatError("csv: row with " + std::to_string(row.size()) + " cells, expected " +
                        std::to_string(t.columns.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

RunLogSummary summarize_runlog(const std::string& text, std::size_t top) {
  using json = nlohmann::json;
  RunLogSummary s;
  s.best_total = std::numeric_limits<double>::quiet_NaN();
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  std::set<std::size_t> gens;
  std::map<std::size_t, double> gen_best;
  std::vector<std::pair<std::vector<std::uint32_t>, double>> all;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw FormatError("runlog line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      const std::string event = j.at("event");
      if (event == "header") {
        if (j.at("schema") != "evoada.runlog") throw FormatError("runlog: unknown schema");
        if (j.at("version") != kRunLogVersion)
          throw FormatError("runlog: unsupported version " + j.at("version").dump());
        s.kind = j.at("kind");
        s.digest = j.at("config_digest");
        header = true;
        continue;
      }
      if (!header) throw FormatError("runlog: events before the header line");
      const std::size_t gen = j.at("gen");
      if (event == "eval") {
        ++s.evaluations;
        gens.insert(gen);
        ++s.status_counts[j.at("status").get<std::string>()];
        if (j.at("total").is_number()) {
          const double total = j.at("total");
          all.emplace_back(j.at("genome").get<std::vector<std::uint32_t>>(), total);
          auto it = gen_best.find(gen);
          if (it == gen_best.end() || total < it->second) gen_best[gen] = total;
        }
      } else if (event == "archive") {
        ++s.status_counts["archived at end: " + j.at("status").get<std::string>()];
      }
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception& e) {
      throw FormatError("runlog line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!header && line_no > 0) throw FormatError("runlog: missing header line");
  s.generations = gens.size();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t g : gens) {
    if (auto it = gen_best.find(g); it != gen_best.end()) best = std::min(best, it->second);
    s.curve.emplace_back(g, best);
  }
  if (std::isfinite(best)) s.best_total = best;
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  for (const auto& [codes, total] : all) {
    if (s.best.size() >= top) break;
    if (std::none_of(s.best.begin(), s.best.end(), [&](const auto& b) { return b.first == codes; }))
      s.best.emplace_back(codes, total);
  }
  return s;
}

std::string render_summary(const RunLogSummary& s, const SearchContext& ctx) {
  std::ostringstream os;
  os << "run kind: " << (s.kind.empty() ? "unknown" : s.kind) << "\n";
  os << "config digest: " << s.digest << "\n";
  os << s.generations << " generations, " << s.evaluations << " evaluations\n";
  os << "best L^PE: " << format_number(s.best_total) << "\n";
  const auto base = AttentionGenome::all_identity(ctx.space.num_slots);
  const auto base_params = network_parameter_count(ctx.spec, ctx.space, base);
  const auto base_flops = network_flops(ctx.spec, ctx.space, base);
  os << "baseline (all Identity): " << base_params << " parameters, " << base_flops
     << " multiply-adds per sample\n";
  if (!s.best.empty()) os << "best genomes:\n";
  for (std::size_t i = 0; i < s.best.size(); ++i) {
    const auto g = decode(s.best[i].first, ctx.space);
    const auto params = network_parameter_count(ctx.spec, ctx.space, g);
    const auto flops = network_flops(ctx.spec, ctx.space, g);
    os << "  " << i + 1 << ". " << describe(g, ctx.space) << "  L^PE " << format_number(s.best[i].second)
       << "  params +" << params - base_params << "  FLOPs +" << flops - base_flops << "\n";
  }
  os << "status counts:\n";
  for (const auto& [status, n] : s.status_counts) os << "  " << status << ": " << n << "\n";
  return os.str();
}

std::string svg_line_chart(const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const std::vector<Series>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  const Frame f = frame_for(x0, x1, y0, y1);
  std::ostringstream os;
  os << axes(f, title, xlabel, ylabel);
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* c = colours[i % 4];
    os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (auto [x, y] : series[i].points)
      if (std::isfinite(x) && std::isfinite(y)) os << fixed(f.px(x), 1) << "," << fixed(f.py(y), 1) << " ";
    os << "\"/>\n";
    os << "<text x=\"" << kWidth - kRight - 150 << "\" y=\"" << kTop + 16 * i + 10 << "\" fill=\"" << c
       << "\">" << escape_xml(series[i].name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_histogram(const std::vector<double>& values, double baseline, std::size_t bins,
                          const std::string& title, const std::string& xlabel) {
  if (bins == 0) bins = 1;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : values)
    if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  if (std::isfinite(baseline)) lo = std::min(lo, baseline), hi = std::max(hi, baseline);
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (!(hi > lo)) hi = lo + 1e-3;
  std::vector<std::size_t> counts(bins, 0);
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    ++counts[std::min(b, bins - 1)];
  }
  const double top = static_cast<double>(*std::max_element(counts.begin(), counts.end()));
  const Frame f = frame_for(lo, hi, 0, std::max(1.0, top));
  std::ostringstream os;
  os << axes(f, title, xlabel, "count");
  const double bw = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    const double xa = f.px(lo + bw * static_cast<double>(b)), xb = f.px(lo + bw * static_cast<double>(b + 1));
    const double yt = f.py(static_cast<double>(counts[b])), yb = f.py(0);
    os << "<rect x=\"" << fixed(xa, 1) << "\" y=\"" << fixed(yt, 1) << "\" width=\"" << fixed(xb - xa, 1)
       << "\" height=\"" << fixed(yb - yt, 1) << "\" fill=\"#9ecae1\" stroke=\"#3182bd\"/>\n";
  }
  if (std::isfinite(baseline))
    os << "<line class=\"baseline\" x1=\"" << fixed(f.px(baseline), 1) << "\" y1=\"" << kTop << "\" x2=\""
       << fixed(f.px(baseline), 1) << "\" y2=\"" << kHeight - kBottom
       << "\" stroke=\"black\" stroke-dasharray=\"6,4\"/>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace evoada
