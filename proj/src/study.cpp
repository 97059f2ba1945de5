#include <cmath>
#include <sstream>

#include "evoada/binary_io.hpp"
#include "evoada/estimator.hpp"

namespace evoada {

namespace {

struct Trained {
  NetworkWeights<float> weights;
  bool diverged = false;
};

Trained train_for_study(const AttentionGenome& genome, const std::string& code,
                        const StudyConfig& cfg, const BackboneSpec& spec, const SpaceParams& space,
                        const DaLossConfig& da, const DatasetPair& data) {
  const std::uint64_t seed = derive_seed(cfg.seed, fnv1a64(code));
  DaLossConfig train_cfg = da;
  train_cfg.epochs = cfg.epochs;
  Trained t{build(spec, space, genome, {cfg.stem_seed, seed}), false};
  Rng rng(derive_seed(seed, 1));
  t.diverged = train(t.weights, data, train_cfg, rng).diverged || !t.weights.all_finite();
  return t;
}

}  // namespace

StudyReport rank_correlation_study(const StudyConfig& cfg, const BackboneSpec& spec,
                                   const SpaceParams& space, const DaLossConfig& da,
                                   const EstimatorConfig& est, const DatasetPair& data) {
  if (cfg.num_genomes < 10) throw std::invalid_argument("rank-correlation study needs N >= 10");
  StudyReport report;
  report.method = da.method_name();
  Rng sampler(derive_seed(cfg.seed, 0));

  std::vector<double> neg_total, src, tgt;
  for (std::size_t i = 0; i < cfg.num_genomes; ++i) {
    const AttentionGenome genome =
        cfg.fixed_genome ? *cfg.fixed_genome : sample_valid_genome(space, spec, sampler);
    StudyRow row;
    row.genome = genome_to_string(genome, space);
    auto [w, diverged] = train_for_study(genome, row.genome, cfg, spec, space, da, data);
    row.diverged = diverged;
    if (!row.diverged) {
      const auto pe = estimate(w, data, est);
      row.source_acc = pe.source_acc;
      row.l_ent = pe.l_ent;
      row.l_div = pe.l_div;
      row.l_pse = pe.l_pse;
      row.total = pe.total;
      row.target_acc = oracle_target_accuracy(w, data);
      if (std::isfinite(row.total)) {
        neg_total.push_back(-row.total);
        src.push_back(row.source_acc);
        tgt.push_back(row.target_acc);
      } else {
        row.diverged = true;
      }
    }
    report.rows.push_back(row);
  }

  report.used = tgt.size();
  std::ostringstream os;
  if (report.used < 2) {
    report.degenerate = true;
    report.rho_estimator = report.rho_source = std::nan("");
    os << "degenerate: fewer than 2 non-diverged genomes";
  } else {
    const auto re = spearman_exact(neg_total, tgt);
    const auto rs = spearman_exact(src, tgt);
    report.rho_estimator = re.rho;
    report.rho_source = rs.rho;
    if (re.degenerate() && rs.degenerate()) {
      report.degenerate = true;
      os << "degenerate: zero rank variance";
    } else {
      os << "rho(-L_PE, target_acc) = " << re.rho << ", rho(source_acc, target_acc) = " << rs.rho;
      if (re.degenerate() || rs.degenerate()) os << " (partly degenerate: zero rank variance)";
    }
  }
  os << " over " << report.used << " of " << report.rows.size() << " genomes, method "
     << report.method;
  report.summary = os.str();
  return report;
}

HistogramReport histogram_study(const StudyConfig& cfg, const BackboneSpec& spec,
                                const SpaceParams& space, const DaLossConfig& da,
                                const DatasetPair& data) {
  HistogramReport report;
  Rng sampler(derive_seed(cfg.seed, 0));
  auto accuracy = [&](const AttentionGenome& g, HistogramRow& row) {
    row.genome = genome_to_string(g, space);
    auto t = train_for_study(g, row.genome, cfg, spec, space, da, data);
    row.diverged = t.diverged;
    row.target_acc = t.diverged ? std::nan("") : oracle_target_accuracy(t.weights, data);
  };
  for (std::size_t i = 0; i < cfg.num_genomes; ++i) {
    HistogramRow row;
    accuracy(cfg.fixed_genome ? *cfg.fixed_genome : sample_valid_genome(space, spec, sampler), row);
    report.rows.push_back(row);
  }
  HistogramRow base;
  accuracy(AttentionGenome::all_identity(space.num_slots), base);
  report.baseline_acc = base.target_acc;
  return report;
}

}  // namespace evoada
