#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dsam/checkpoint.hpp"
#include "dsam/config.hpp"
#include "dsam/metrics.hpp"

namespace dsam {

struct MetricsReport {
  std::size_t m = 0;
  double elbo = 0;
  double log_z = 0;
  double ess_v = 0;
  std::optional<double> emc_v;  // only when the target publishes mode centers
};

struct RunArtifact {
  ExperimentConfig config;
  std::string out_dir;
  std::vector<EvalRecord> history;  // empty for SMC runs
  double final_log_z = 0;
  double final_elbo = 0;
  std::size_t final_k = 1;
};

namespace detail {

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << content;
}

inline std::string metrics_csv(const std::vector<EvalRecord>& history) {
  std::ostringstream o;
  o << "step,loss,elbo,log_z,ess,running_elbo\n";
  o.precision(17);
  for (const auto& r : history)
    o << r.step << "," << r.loss << "," << r.elbo << "," << r.log_z << "," << r.ess_v << ","
      << r.running_elbo << "\n";
  return o.str();
}

inline std::string histogram_csv(const Histogram& h) {
  std::ostringstream o;
  o << "bin_lo,bin_hi,mass\n";
  o.precision(17);
  for (std::size_t b = 0; b + 1 < h.edges.size(); ++b)
    o << h.edges[b] << "," << h.edges[b + 1] << "," << h.mass[b] << "\n";
  return o.str();
}

/// Scalar summary of a sample batch for the artifact histogram: average
/// magnetization for lattice targets, the first coordinate otherwise.
inline std::vector<double> summary_values(const TargetSpec& spec, const Tensor& X) {
  std::vector<double> vals(X.dim(0));
  if (spec.name == "phi4") {
    Tensor mag = magnetization(X);
    for (std::size_t i = 0; i < mag.size(); ++i) vals[i] = mag[i];
  } else {
    for (std::size_t i = 0; i < X.dim(0); ++i) vals[i] = X.at(i, 0);
  }
  return vals;
}

}  // namespace detail

/// Draws a fresh evaluation batch from the model and reports weight metrics
/// (plus mode coverage when the target exposes its mode centers).
inline MetricsReport eval_model(SamplerModel& M, std::size_t m, Rng& rng) {
  Tape t;
  auto res = simulate_forward(t, M, rng, m, false);
  std::vector<double> lw;
  for (std::size_t i = 0; i < m; ++i)
    if (res.finite[i]) lw.push_back(res.log_w.val()[i]);
  MetricsReport rep;
  rep.m = m;
  rep.elbo = elbo(lw);
  rep.log_z = log_z_hat(lw);
  rep.ess_v = ess(lw);
  if (auto centers = M.target->mode_centers())
    rep.emc_v = emc(res.x_final.val(), *centers);
  return rep;
}

inline MetricsReport eval_checkpoint(const Checkpoint& ck, std::size_t m = 2000,
                                     std::uint64_t eval_seed = 0) {
  RestoredModel rm = restore_model(ck);
  Rng rng = RngPool(eval_seed).stream("eval");
  return eval_model(*rm.model, m, rng);
}

/// Executes a full experiment (training or SMC) and writes the artifact:
/// config snapshot, metrics CSV, checkpoint JSON, histogram CSV.
inline RunArtifact run_experiment(const ExperimentConfig& cfg, bool quiet = false) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  RunArtifact art;
  art.config = cfg;
  art.out_dir = cfg.out_dir;
  detail::write_file(cfg.out_dir + "/config.toml", serialize_config(cfg));

  std::unique_ptr<Target> tg = make_target(cfg.target);
  RngPool pool(cfg.seed);

  if (cfg.algorithm == "smc") {
    Rng rng = pool.stream("smc");
    SmcResult res = smc_run(*tg, cfg.smc.cfg, rng);
    art.final_log_z = res.log_z;
    art.final_elbo = res.log_z;  // SMC reports only the normalizer estimate
    std::ostringstream o;
    o << "step,loss,elbo,log_z,ess,running_elbo\n";
    o.precision(17);
    double e = ess(res.log_w);
    o << cfg.smc.cfg.n_anneal << ",0," << res.log_z << "," << res.log_z << "," << e << ","
      << res.log_z << "\n";
    detail::write_file(cfg.out_dir + "/metrics.csv", o.str());
    auto vals = detail::summary_values(cfg.target, res.particles);
    double lo = *std::min_element(vals.begin(), vals.end());
    double hi = *std::max_element(vals.begin(), vals.end());
    if (lo == hi) hi = lo + 1.0;
    detail::write_file(cfg.out_dir + "/histogram.csv",
                       detail::histogram_csv(histogram(vals, 50, lo, hi)));
    if (!quiet)
      std::cout << "smc: log_z=" << res.log_z << " ess=" << e
                << " resamples=" << res.n_resamples << "\n";
    return art;
  }

  Rng init_rng = pool.stream("prior-init");
  SamplerModel M = make_model(cfg, *tg, init_rng);

  TrainHooks hooks;
  if (cfg.refine.enabled) {
    hooks.refine_interval = cfg.refine.schedule.interval;
    hooks.refine = [&](std::size_t step) {
      Rng mala_rng = pool.stream("mala", step);
      refine_once(M, cfg.refine.schedule, mala_rng);
    };
  }
  if (!quiet)
    hooks.on_eval = [&](const EvalRecord& r) {
      std::cout << "step " << r.step << ": loss=" << r.loss << " elbo=" << r.elbo
                << " log_z=" << r.log_z << " ess=" << r.ess_v << " K="
                << M.prior.n_components() << "\n";
    };

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  TrainResult res = train(M, tc, cfg.loss, hooks);
  art.history = res.history;
  art.final_k = M.prior.n_components();
  if (!res.history.empty()) {
    art.final_elbo = res.history.back().elbo;
    art.final_log_z = res.history.back().log_z;
  }

  detail::write_file(cfg.out_dir + "/metrics.csv", detail::metrics_csv(res.history));
  save_checkpoint(snapshot_checkpoint(M, cfg), cfg.out_dir + "/checkpoint.json");

  Rng hist_rng = pool.stream("artifact-hist");
  Tape t;
  auto sim = simulate_forward(t, M, hist_rng, std::max<std::size_t>(cfg.train.eval_batch, 1),
                              false);
  auto vals = detail::summary_values(cfg.target, sim.x_final.val());
  double lo = *std::min_element(vals.begin(), vals.end());
  double hi = *std::max_element(vals.begin(), vals.end());
  if (lo == hi) hi = lo + 1.0;
  detail::write_file(cfg.out_dir + "/histogram.csv",
                     detail::histogram_csv(histogram(vals, 50, lo, hi)));
  if (!quiet)
    std::cout << "done: best running elbo " << res.best_running_elbo << " at step "
              << res.best_step << ", K=" << art.final_k << "\n";
  return art;
}

/// Derives plot-ready CSVs from a written artifact directory: ELBO and ESS
/// curves from metrics.csv, a 2-d sample scatter and the component means from
/// the checkpoint. Missing inputs are skipped with a warning.
inline void export_plot_data(const std::string& artifact_dir, std::size_t scatter_m = 2000,
                             std::uint64_t seed = 0) {
  namespace fs = std::filesystem;
  std::string metrics = artifact_dir + "/metrics.csv";
  if (fs::exists(metrics)) {
    std::ifstream in(metrics);
    std::string header, line;
    std::getline(in, header);
    std::ostringstream elbo_o, ess_o;
    elbo_o << "step,elbo,running_elbo\n";
    ess_o << "step,ess\n";
    while (std::getline(in, line)) {
      std::istringstream row(line);
      std::string step, loss, elbo_s, logz, ess_s, run;
      std::getline(row, step, ',');
      std::getline(row, loss, ',');
      std::getline(row, elbo_s, ',');
      std::getline(row, logz, ',');
      std::getline(row, ess_s, ',');
      std::getline(row, run, ',');
      elbo_o << step << "," << elbo_s << "," << run << "\n";
      ess_o << step << "," << ess_s << "\n";
    }
    detail::write_file(artifact_dir + "/elbo_curve.csv", elbo_o.str());
    detail::write_file(artifact_dir + "/ess_curve.csv", ess_o.str());
  } else {
    std::cerr << "warning: " << metrics << " missing, curves skipped\n";
  }

  std::string ckpath = artifact_dir + "/checkpoint.json";
  if (!fs::exists(ckpath)) {
    std::cerr << "warning: " << ckpath << " missing, scatter/means skipped\n";
    return;
  }
  Checkpoint ck = load_checkpoint(ckpath);
  RestoredModel rm = restore_model(ck);
  Rng rng = RngPool(seed).stream("export-scatter");
  Tape t;
  auto sim = simulate_forward(t, *rm.model, rng, scatter_m, false);
  const Tensor& X = sim.x_final.val();
  std::ostringstream sc;
  sc << "x0,x1\n";
  sc.precision(17);
  for (std::size_t i = 0; i < X.dim(0); ++i)
    sc << X.at(i, 0) << "," << (X.dim(1) > 1 ? X.at(i, 1) : 0.0) << "\n";
  detail::write_file(artifact_dir + "/scatter.csv", sc.str());

  std::ostringstream mu;
  mu << "component";
  for (std::size_t j = 0; j < rm.model->target->dim(); ++j) mu << ",mean_" << j;
  mu << "\n";
  mu.precision(17);
  const Tensor& means = rm.model->prior.means().value;
  for (std::size_t k = 0; k < means.dim(0); ++k) {
    mu << k;
    for (std::size_t j = 0; j < means.dim(1); ++j) mu << "," << means.at(k, j);
    mu << "\n";
  }
  detail::write_file(artifact_dir + "/components.csv", mu.str());
}

}  // namespace dsam
