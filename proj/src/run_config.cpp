#include "evoada/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "evoada/binary_io.hpp"
#include "evoada/errors.hpp"

namespace evoada {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty())
    throw std::invalid_argument("'" + s + "' is not a valid number");
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + f(v[i]);
  return s;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  return join<std::size_t>(v, [](const std::size_t& x) { return std::to_string(x); });
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : split(s)) out.push_back(parse_number<std::size_t>(item));
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

void add_size(std::vector<Field>& f, const char* sec, const char* key, std::size_t& v) {
  f.push_back({sec, key, [&v] { return std::to_string(v); },
               [&v](const std::string& s) { v = parse_number<std::size_t>(s); }});
}

void add_u64(std::vector<Field>& f, const char* sec, const char* key, std::uint64_t& v) {
  f.push_back({sec, key, [&v] { return std::to_string(v); },
               [&v](const std::string& s) { v = parse_number<std::uint64_t>(s); }});
}

void add_double(std::vector<Field>& f, const char* sec, const char* key, double& v) {
  f.push_back({sec, key, [&v] { return format_double(v); },
               [&v](const std::string& s) { v = parse_number<double>(s); }});
}

void add_sizes(std::vector<Field>& f, const char* sec, const char* key, std::vector<std::size_t>& v) {
  f.push_back({sec, key, [&v] { return join_sizes(v); },
               [&v](const std::string& s) { v = parse_sizes(s); }});
}

// Field table over a config instance, in emission order.
std::vector<Field> fields(RunConfig& c) {
  std::vector<Field> f;
  auto& sp = c.search.space;
  f.push_back({"space", "kinds",
               [&sp] {
                 return join<AttentionKind>(sp.kinds, [](const AttentionKind& k) { return to_string(k); });
               },
               [&sp](const std::string& s) {
                 sp.kinds.clear();
                 for (const auto& item : split(s)) sp.kinds.push_back(attention_kind_from_string(item));
               }});
  add_sizes(f, "space", "widths", sp.widths);
  add_sizes(f, "space", "groups", sp.groups);
  add_size(f, "space", "num_slots", sp.num_slots);

  auto& bb = c.search.spec;
  add_sizes(f, "backbone", "channels", bb.channels);
  add_sizes(f, "backbone", "strides", bb.strides);
  add_size(f, "backbone", "input_channels", bb.input_channels);
  add_size(f, "backbone", "input_height", bb.input_height);
  add_size(f, "backbone", "input_width", bb.input_width);
  add_size(f, "backbone", "num_classes", bb.num_classes);

  auto& da = c.search.da;
  f.push_back({"da", "mode", [&da] { return to_string(da.mode); },
               [&da](const std::string& s) { da.mode = da_mode_from_string(s); }});
  add_double(f, "da", "lambda_ent", da.lambda_ent);
  add_double(f, "da", "lambda_align", da.lambda_align);
  add_size(f, "da", "epochs", da.epochs);
  add_size(f, "da", "batch_size", da.batch_size);
  add_double(f, "da", "lr", da.lr);
  add_double(f, "da", "momentum", da.momentum);
  add_double(f, "da", "weight_decay", da.weight_decay);
  add_double(f, "da", "grad_clip", da.grad_clip);

  auto& est = c.search.est;
  add_double(f, "estimator", "w_ent", est.w_ent);
  add_double(f, "estimator", "w_div", est.w_div);
  add_double(f, "estimator", "w_pse", est.w_pse);

  auto& evo = c.search.evo;
  add_size(f, "evo", "K", evo.K);
  add_size(f, "evo", "T", evo.T);
  add_double(f, "evo", "tr_acc", evo.tr_acc);
  add_size(f, "evo", "T_d", evo.T_d);
  add_double(f, "evo", "top_frac", evo.top_frac);
  add_size(f, "evo", "epochs_per_generation", evo.epochs_per_generation);
  add_u64(f, "evo", "stem_seed", evo.stem_seed);
  add_u64(f, "evo", "master_seed", evo.master_seed);
  add_size(f, "evo", "retrain_epochs", evo.retrain_epochs);
  add_size(f, "evo", "retrain_seeds", evo.retrain_seeds);
  add_size(f, "evo", "random_epochs", evo.random_epochs);
  add_size(f, "evo", "workers", evo.workers);

  auto& d = c.data;
  f.push_back({"data", "task", [&d] { return to_string(d.task); },
               [&d](const std::string& s) { d.task = task_kind_from_string(s); }});
  add_size(f, "data", "num_classes", d.num_classes);
  add_size(f, "data", "samples_per_class", d.samples_per_class);
  add_size(f, "data", "channels", d.channels);
  add_size(f, "data", "height", d.height);
  add_size(f, "data", "width", d.width);
  add_double(f, "data", "rotation_deg", d.rotation_deg);
  add_double(f, "data", "brightness", d.brightness);
  add_double(f, "data", "source_noise", d.source_noise);
  add_double(f, "data", "target_noise", d.target_noise);
  f.push_back({"data", "variant", [&d] { return to_string(d.variant); },
               [&d](const std::string& s) { d.variant = variant_from_string(s); }});
  add_sizes(f, "data", "kept_classes", d.kept_classes);
  add_size(f, "data", "unknown_classes", d.unknown_classes);
  add_u64(f, "data", "seed", d.seed);

  add_size(f, "study", "rank_genomes", c.study.rank_genomes);
  add_size(f, "study", "histogram_genomes", c.study.histogram_genomes);
  add_size(f, "study", "epochs", c.study.epochs);
  add_u64(f, "study", "seed", c.study.seed);

  f.push_back({"output", "dir", [&c] { return c.output_dir; },
               [&c](const std::string& s) { c.output_dir = s; }});
  return f;
}

}  // namespace

void RunConfig::check() const {
  auto wrap = [](const char* field, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(field, e.what());
    }
  };
  wrap("space", [&] { search.space.check(); });
  wrap("backbone", [&] { search.spec.check(); });
  wrap("da", [&] { search.da.check(); });
  wrap("estimator", [&] { search.est.check(); });
  wrap("evo", [&] { search.evo.check(); });
  wrap("data", [&] { data.check(); });
  const auto& bb = search.spec;
  if (bb.input_channels != data.channels || bb.input_height != data.height ||
      bb.input_width != data.width)
    throw ConfigError("data", "image shape differs from the backbone input");
  if (bb.num_classes != data.num_classes)
    throw ConfigError("data.num_classes", "differs from backbone.num_classes");
  if (search.space.num_slots != bb.num_slots())
    throw ConfigError("space.num_slots", "must equal half the backbone blocks (" +
                                             std::to_string(bb.num_slots()) + ")");
  if (study.epochs < 1) throw ConfigError("study.epochs", "must be >= 1");
  if (output_dir.empty()) throw ConfigError("output.dir", "must not be empty");
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  auto table = fields(cfg);
  std::set<std::string> sections;
  for (const auto& f : table) sections.insert(f.section);
  std::set<std::string> seen;

  std::istringstream in(text);
  std::string raw, section;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line, "malformed section header", line_no);
      section = trim(line.substr(1, line.size() - 2));
      if (!sections.count(section)) throw ConfigError(section, "unknown section", line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected 'key = value'", line_no);
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const std::string name = section + "." + key;
    if (section.empty()) throw ConfigError(key, "key outside any [section]", line_no);
    auto it = std::find_if(table.begin(), table.end(),
                           [&](const Field& f) { return f.section == section && f.key == key; });
    if (it == table.end()) throw ConfigError(name, "unknown key", line_no);
    if (!seen.insert(name).second) throw ConfigError(name, "duplicate key", line_no);
    try {
      it->set(value);
    } catch (const std::exception& e) {
      throw ConfigError(name, e.what(), line_no);
    }
  }
  cfg.check();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path, "cannot read config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string emit_run_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::string out, section;
  for (const auto& f : fields(copy)) {
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get() + "\n";
  }
  return out;
}

std::string config_digest(const RunConfig& cfg) { return fnv1a_hex(emit_run_config(cfg)); }

bool operator==(const RunConfig& a, const RunConfig& b) {
  return emit_run_config(a) == emit_run_config(b);
}

}  // namespace evoada
