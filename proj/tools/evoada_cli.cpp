// evoada command-line front end.
//
//   evoada search           --config run.ini [--stop-after G] [--resume]
//   evoada random-search    --config run.ini [--budget EPOCHS]
//   evoada histogram        --config run.ini [--genomes N]
//   evoada rank-correlation --config run.ini [--genomes N] [--fixed-genome CODES]
//   evoada retrain          --config run.ini --genome CODES [--seeds N]
//   evoada report           RUN_DIR
//
// Exit codes: 0 ok, 1 configuration or input error, 2 runtime failure.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "evoada/binary_io.hpp"
#include "evoada/errors.hpp"
#include "evoada/reports.hpp"
#include "evoada/run_config.hpp"

namespace fs = std::filesystem;
using namespace evoada;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::size_t> workers;
  std::optional<std::string> output;
};

/// Error in user input; exits with 1.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig load(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  if (const char* env = std::getenv("EVOADA_SEED")) {
    try {
      std::size_t used = 0;
      cfg.search.evo.master_seed = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
    } catch (const std::exception&) {
      throw ConfigError("EVOADA_SEED", std::string("not an unsigned integer: '") + env + "'");
    }
  }
  if (c.workers) cfg.search.evo.workers = *c.workers;
  if (c.output) cfg.output_dir = *c.output;
  cfg.check();
  return cfg;
}

std::string prepare_dir(const RunConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  write_file_atomic((fs::path(cfg.output_dir) / "config.ini").string(), emit_run_config(cfg));
  return cfg.output_dir;
}

std::string path_in(const std::string& dir, const char* name) { return (fs::path(dir) / name).string(); }

std::string tagged_svg(std::string svg, const std::string& digest) {
  return svg + "<!-- config_digest=" + digest + " -->\n";
}

void audit(const DatasetPair& data, const char* phase) {
  const auto reads = data.hidden.access_count();
  std::cout << "hidden-label reads after " << phase << ": " << reads << "\n";
  if (reads != 0) throw std::runtime_error("hidden target labels were read during the " + std::string(phase));
}

int cmd_search(const Common& c, std::optional<std::size_t> stop_after, bool resume) {
  const auto cfg = load(c);
  const auto digest = config_digest(cfg);
  const auto dir = prepare_dir(cfg);
  const auto& ctx = cfg.search;
  const auto data = generate(cfg.data);

  RunOptions opts;
  opts.checkpoint_path = path_in(dir, "checkpoint.evoc");
  opts.log_path = path_in(dir, "runlog.jsonl");
  opts.stop_after = stop_after;
  opts.resume = resume;
  opts.config_digest = digest;
  const auto res = run(ctx, data, opts);
  if (!res.completed) {
    std::cout << "stopped after " << res.state.generation << " generations; checkpoint "
              << opts.checkpoint_path << " (continue with --resume)\n";
    return 0;
  }
  audit(data, "search");

  // report phase: oracle accuracies are read from here on
  const auto& st = res.state;
  CsvTable curve{"evoada.search_curve", kCsvVersion, digest,
                 {"generation", "epochs_used", "best_total", "best_id", "best_genome", "oracle_target_acc"}, {}};
  std::vector<double> oracle(st.snapshots.size(), std::nan(""));
  for (std::size_t i = 0; i < st.snapshots.size(); ++i) oracle[i] = oracle_target_accuracy(st.snapshots[i], data);
  Series lpe{"best L^PE", {}}, acc{"oracle target acc", {}};
  for (const auto& p : st.curve) {
    const bool has = p.snapshot < oracle.size();
    const double a = has ? oracle[p.snapshot] : std::nan("");
    const auto epochs = (p.generation + 1) * ctx.evo.K * ctx.evo.epochs_per_generation;
    curve.rows.push_back({std::to_string(p.generation), std::to_string(epochs), format_number(p.best_total),
                          has ? std::to_string(p.best_id) : "", has ? genome_cell(p.best_genome, ctx.space) : "",
                          format_number(a)});
    lpe.points.emplace_back(static_cast<double>(p.generation), p.best_total);
    acc.points.emplace_back(static_cast<double>(p.generation), a);
  }
  write_file_atomic(path_in(dir, "search_curve.csv"), write_csv(curve));
  write_file_atomic(path_in(dir, "search_curve.svg"),
                    tagged_svg(svg_line_chart("Search curve", "generation", "best L^PE", {lpe}), digest));
  write_file_atomic(path_in(dir, "search_accuracy.svg"),
                    tagged_svg(svg_line_chart("Best-so-far oracle target accuracy", "generation",
                                              "target accuracy", {acc}), digest));

  const auto ranked = ranked_archive(st);
  std::ostringstream best;
  best << "# evoada best genome, config_digest=" << digest << "\n";
  if (ranked.empty()) {
    best << "none (empty archive)\n";
  } else {
    const auto& b = *ranked.front();
    best << "codes: " << genome_to_string(b.genome, ctx.space) << "\n";
    best << "genome: " << describe(b.genome, ctx.space) << "\n";
    best << "id: " << b.id << "\nstatus: " << to_string(b.status) << "\nL^PE: " << format_number(b.fitness())
         << "\n";
  }
  write_file_atomic(path_in(dir, "best_genome.txt"), best.str());
  std::cout << best.str();
  std::cout << "archive: " << st.archive.size() << " genomes; epochs trained: " << st.epochs_used << "\n";
  return 0;
}

int cmd_random_search(const Common& c, std::optional<std::uint64_t> budget) {
  const auto cfg = load(c);
  const auto digest = config_digest(cfg);
  const auto dir = prepare_dir(cfg);
  const auto& ctx = cfg.search;
  const auto data = generate(cfg.data);
  // the evolutionary run trains K individuals per generation, T generations
  const std::uint64_t b = budget ? *budget : ctx.evo.K * ctx.evo.T * ctx.evo.epochs_per_generation;
  const auto res = random_search(ctx, data, b, digest);
  audit(data, "random search");
  write_file_atomic(path_in(dir, "random_runlog.jsonl"), res.log);

  CsvTable curve{"evoada.random_curve", kCsvVersion, digest,
                 {"candidate", "epochs_used", "genome", "total", "best_total"}, {}};
  Series rs{"random search", {}};
  for (const auto& cand : res.trajectory) {
    curve.rows.push_back({std::to_string(cand.id), std::to_string(cand.epochs_used),
                          genome_cell(cand.genome, ctx.space), format_number(cand.report.total),
                          format_number(cand.best_total)});
    rs.points.emplace_back(static_cast<double>(cand.epochs_used), cand.best_total);
  }
  write_file_atomic(path_in(dir, "random_curve.csv"), write_csv(curve));
  std::vector<Series> series{rs};
  // pair with the evolutionary curve of the same directory when present
  const auto evo_log = path_in(dir, "runlog.jsonl");
  if (fs::exists(evo_log)) {
    const auto s = summarize_runlog(read_file(evo_log));
    Series ev{"evolution", {}};
    for (auto [g, best] : s.curve)
      ev.points.emplace_back(static_cast<double>((g + 1) * ctx.evo.K * ctx.evo.epochs_per_generation), best);
    series.insert(series.begin(), ev);
  }
  write_file_atomic(path_in(dir, "random_vs_search.svg"),
                    tagged_svg(svg_line_chart("Best L^PE at matched training budget", "epochs trained",
                                              "best L^PE", series), digest));
  std::cout << res.trajectory.size() << " random genomes, " << res.epochs_used << " epochs, best L^PE "
            << format_number(res.trajectory.empty() ? std::nan("") : res.trajectory.back().best_total) << "\n";
  return 0;
}

StudyConfig study_config(const RunConfig& cfg, std::size_t n) {
  StudyConfig s;
  s.num_genomes = n;
  s.epochs = cfg.study.epochs;
  s.seed = cfg.study.seed;
  s.stem_seed = cfg.search.evo.stem_seed;
  return s;
}

int cmd_histogram(const Common& c, std::optional<std::size_t> genomes) {
  const auto cfg = load(c);
  const auto digest = config_digest(cfg);
  const auto dir = prepare_dir(cfg);
  const auto data = generate(cfg.data);
  const auto s = study_config(cfg, genomes.value_or(cfg.study.histogram_genomes));
  const auto rep = histogram_study(s, cfg.search.spec, cfg.search.space, cfg.search.da, data);
  CsvTable t{"evoada.histogram", kCsvVersion, digest, {"genome", "target_acc"}, {}};
  std::vector<double> accs;
  for (const auto& r : rep.rows) {
    t.rows.push_back({genome_cell(genome_from_string(r.genome, cfg.search.space), cfg.search.space),
                      format_number(r.target_acc)});
    accs.push_back(r.target_acc);
  }
  write_file_atomic(path_in(dir, "histogram.csv"), write_csv(t));
  write_file_atomic(path_in(dir, "histogram.svg"),
                    tagged_svg(svg_histogram(accs, rep.baseline_acc, 10,
                                             "Target accuracy of random genomes (dashed: all Identity)",
                                             "oracle target accuracy"),
                               digest));
  double lo = 1, hi = 0;
  for (double a : accs)
    if (std::isfinite(a)) lo = std::min(lo, a), hi = std::max(hi, a);
  std::cout << accs.size() << " genomes, accuracy " << format_number(lo) << " .. " << format_number(hi)
            << ", all-Identity baseline " << format_number(rep.baseline_acc) << "\n";
  return 0;
}

int cmd_rank_correlation(const Common& c, std::optional<std::size_t> genomes,
                         const std::string& fixed) {
  const auto cfg = load(c);
  const auto digest = config_digest(cfg);
  const auto dir = prepare_dir(cfg);
  const auto data = generate(cfg.data);
  auto s = study_config(cfg, genomes.value_or(cfg.study.rank_genomes));
  if (!fixed.empty()) {
    try {
      s.fixed_genome = genome_from_string(fixed, cfg.search.space);
    } catch (const std::exception& e) {
      throw InputError(std::string("--fixed-genome: ") + e.what());
    }
  }
  if (s.num_genomes < 10) throw InputError("--genomes: the study needs N >= 10");
  const auto rep = rank_correlation_study(s, cfg.search.spec, cfg.search.space, cfg.search.da,
                                          cfg.search.est, data);
  CsvTable t{"evoada.rank_correlation", kCsvVersion, digest,
             {"genome", "source_acc", "l_ent", "l_div", "l_pse", "total", "target_acc", "diverged"}, {}};
  for (const auto& r : rep.rows)
    t.rows.push_back({genome_cell(genome_from_string(r.genome, cfg.search.space), cfg.search.space),
                      format_number(r.source_acc), format_number(r.l_ent), format_number(r.l_div),
                      format_number(r.l_pse), format_number(r.total), format_number(r.target_acc),
                      r.diverged ? "1" : "0"});
  write_file_atomic(path_in(dir, "rank_correlation.csv"), write_csv(t));
  write_file_atomic(path_in(dir, "rank_correlation.txt"),
                    rep.summary + "\nconfig_digest=" + digest + "\n");
  std::cout << rep.summary << "\n";
  return 0;
}

int cmd_retrain(const Common& c, const std::string& genome_text, std::optional<std::size_t> seeds) {
  const auto cfg = load(c);
  const auto digest = config_digest(cfg);
  const auto dir = prepare_dir(cfg);
  AttentionGenome genome;
  try {
    genome = genome_from_string(genome_text, cfg.search.space);
  } catch (const std::exception& e) {
    throw InputError(std::string("--genome: ") + e.what());
  }
  if (auto errs = validate(genome, cfg.search.space, cfg.search.spec); !errs.empty())
    throw InputError("--genome: " + errs.front());
  const auto data = generate(cfg.data);
  const auto seed_list = retrain_seeds(cfg.search.evo.master_seed, seeds.value_or(cfg.search.evo.retrain_seeds));
  const auto r = retrain(genome, cfg.search, data, seed_list, cfg.search.evo.retrain_epochs);
  CsvTable t{"evoada.retrain", kCsvVersion, digest, {"seed", "target_acc", "diverged"}, {}};
  for (std::size_t i = 0; i < seed_list.size(); ++i)
    t.rows.push_back({std::to_string(seed_list[i]), format_number(r.accuracies[i]), r.diverged[i] ? "1" : "0"});
  write_file_atomic(path_in(dir, "retrain.csv"), write_csv(t));
  std::cout << describe(genome, cfg.search.space) << "\n";
  std::cout << "target accuracy " << format_number(r.mean) << " +- " << format_number(r.sd) << " over "
            << seed_list.size() << " seeds" << (r.any_diverged ? " (some seeds diverged)" : "") << "\n";
  return 0;
}

int cmd_report(const std::string& dir) {
  const auto log_path = path_in(dir, "runlog.jsonl");
  std::string text;
  try {
    text = read_file(log_path);
  } catch (const std::exception&) {
    throw InputError("cannot read " + log_path);
  }
  RunConfig cfg;
  if (const auto cfg_path = path_in(dir, "config.ini"); fs::exists(cfg_path)) cfg = load_run_config(cfg_path);
  RunLogSummary s;
  try {
    s = summarize_runlog(text);
  } catch (const std::exception& e) {
    throw InputError(log_path + ": " + e.what());
  }
  const auto summary = render_summary(s, cfg.search);
  write_file_atomic(path_in(dir, "summary.txt"), summary);
  Series curve{"best L^PE", {}};
  for (auto [g, best] : s.curve) curve.points.emplace_back(static_cast<double>(g), best);
  write_file_atomic(path_in(dir, "runlog_curve.svg"),
                    tagged_svg(svg_line_chart("Best L^PE from the run log", "generation", "best L^PE", {curve}),
                               s.digest));
  std::cout << summary;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evolutionary attention search for unsupervised domain adaptation"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config_path, "run configuration file");
    sub->add_option("--workers", common.workers, "worker threads for evaluation")->check(CLI::PositiveNumber);
    sub->add_option("-o,--output", common.output, "output directory (overrides output.dir)");
  };

  std::optional<std::size_t> stop_after;
  bool resume = false;
  auto* search = app.add_subcommand("search", "run the evolutionary search");
  add_common(search);
  search->add_option("--stop-after", stop_after, "stop after this many generations");
  search->add_flag("--resume", resume, "continue from the checkpoint in the output directory");

  std::optional<std::uint64_t> budget;
  auto* random = app.add_subcommand("random-search", "random search at the evolutionary epoch budget");
  add_common(random);
  random->add_option("--budget", budget, "training epochs (default K * T * epochs_per_generation)");

  std::optional<std::size_t> genomes;
  auto* hist = app.add_subcommand("histogram", "target accuracy of random genomes");
  add_common(hist);
  hist->add_option("--genomes", genomes, "number of random genomes");

  std::string fixed;
  auto* rank = app.add_subcommand("rank-correlation", "estimator against source accuracy as a selector");
  add_common(rank);
  rank->add_option("--genomes", genomes, "number of random genomes (>= 10)");
  rank->add_option("--fixed-genome", fixed, "train this genome every time (codes, comma separated)");

  std::string genome;
  std::optional<std::size_t> seeds;
  auto* re = app.add_subcommand("retrain", "retrain a genome from scratch over several seeds");
  add_common(re);
  re->add_option("--genome", genome, "genome codes, comma separated")->required();
  re->add_option("--seeds", seeds, "number of seeds")->check(CLI::PositiveNumber);

  std::string run_dir;
  auto* report = app.add_subcommand("report", "summarize a run directory");
  report->add_option("run_dir", run_dir, "directory with runlog.jsonl")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*search) return cmd_search(common, stop_after, resume);
    if (*random) return cmd_random_search(common, budget);
    if (*hist) return cmd_histogram(common, genomes);
    if (*rank) return cmd_rank_correlation(common, genomes, fixed);
    if (*re) return cmd_retrain(common, genome, seeds);
    if (*report) return cmd_report(run_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
