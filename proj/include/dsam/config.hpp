#pragma once

#include <cctype>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include "dsam/losses.hpp"
#include "dsam/refine.hpp"
#include "dsam/smc.hpp"
#include "dsam/targets.hpp"

namespace dsam {

// ---------------------------------------------------------------------------
// Minimal TOML subset: [table] headers, key = value with strings, numbers and
// booleans, '#' comments. Enough to round-trip experiment configs.
// ---------------------------------------------------------------------------

namespace toml {

struct Value {
  enum Kind { String, Number, Boolean } kind = Number;
  std::string str;
  double num = 0;
  bool boolean = false;
};

using Table = std::map<std::string, Value>;  // dotted keys: "section.key"

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline Table parse(const std::string& text) {
  Table out;
  std::string section;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // strip comments outside of strings
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_str = !in_str;
      if (line[i] == '#' && !in_str) {
        line = line.substr(0, i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": malformed table header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(lineno) + ": empty table name");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string raw = trim(line.substr(eq + 1));
    if (key.empty() || raw.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
    Value v;
    if (raw.front() == '"') {
      if (raw.size() < 2 || raw.back() != '"')
        throw ConfigError("config line " + std::to_string(lineno) + ": unterminated string");
      v.kind = Value::String;
      v.str = raw.substr(1, raw.size() - 2);
    } else if (raw == "true" || raw == "false") {
      v.kind = Value::Boolean;
      v.boolean = raw == "true";
    } else {
      v.kind = Value::Number;
      try {
        std::size_t used = 0;
        v.num = std::stod(raw, &used);
        if (used != raw.size()) throw std::invalid_argument(raw);
      } catch (const std::exception&) {
        throw ConfigError("config line " + std::to_string(lineno) + ": bad number '" + raw + "'");
      }
    }
    out[section.empty() ? key : section + "." + key] = v;
  }
  return out;
}

}  // namespace toml

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

enum class PriorKind { Fixed, Gaussian, Mixture };

inline std::string prior_kind_name(PriorKind k) {
  switch (k) {
    case PriorKind::Fixed: return "fixed";
    case PriorKind::Gaussian: return "gaussian";
    case PriorKind::Mixture: return "gmp";
  }
  return "?";
}

struct TargetSpec {
  std::string name = "gaussian";            // gaussian | funnel | gmm | logreg | phi4
  double mean = 0.0;                        // gaussian
  double variance = 1.0;                    // gaussian
  std::size_t dim = 2;                      // gaussian
  std::uint64_t gmm_seed = 0;               // gmm
  std::string dataset;                      // logreg; empty -> synthetic
  std::string label_col = "y";              // logreg
  std::size_t lattice = 4;                  // phi4
  double kappa = 0.2;                       // phi4
  double lambda = 0.022;                    // phi4

  bool operator==(const TargetSpec&) const = default;
};

struct ModelSpec {
  Method method = Method::DIS;
  PriorKind prior = PriorKind::Gaussian;
  std::size_t K = 1;
  std::size_t N = 8;
  double sigma = 1.0;
  bool score_head = false;
  std::size_t hidden = 128;
  double prior_mean_scale = 1.0;
  double prior_init_std = 1.0;

  bool operator==(const ModelSpec&) const = default;
};

struct RefineSpec {
  bool enabled = false;
  RefinementSchedule schedule;

  bool operator==(const RefineSpec& o) const {
    return enabled == o.enabled && schedule.interval == o.schedule.interval &&
           schedule.k_max == o.schedule.k_max && schedule.new_std == o.schedule.new_std &&
           schedule.n_chains == o.schedule.n_chains && schedule.n_steps == o.schedule.n_steps &&
           schedule.chain_init_std == o.schedule.chain_init_std &&
           schedule.sigma_tilde == o.schedule.sigma_tilde &&
           schedule.mala_dt == o.schedule.mala_dt && schedule.rollouts == o.schedule.rollouts &&
           schedule.forward_heuristic == o.schedule.forward_heuristic;
  }
};

struct SmcSpec {
  SmcConfig cfg;

  bool operator==(const SmcSpec& o) const {
    return cfg.m == o.cfg.m && cfg.n_anneal == o.cfg.n_anneal &&
           cfg.init_scale == o.cfg.init_scale &&
           cfg.resample_threshold == o.cfg.resample_threshold &&
           cfg.hmc.leapfrog == o.cfg.hmc.leapfrog && cfg.hmc.step_early == o.cfg.hmc.step_early &&
           cfg.hmc.step_late == o.cfg.hmc.step_late && cfg.hmc.beta_split == o.cfg.hmc.beta_split;
  }
};

struct ExperimentConfig {
  std::string algorithm = "train";  // train | smc
  std::uint64_t seed = 0;
  std::string out_dir = "runs/out";
  TargetSpec target;
  ModelSpec model;
  LossKind loss = LossKind::KL;
  TrainConfig train;
  RefineSpec refine;
  SmcSpec smc;

  bool operator==(const ExperimentConfig& o) const {
    return algorithm == o.algorithm && seed == o.seed && out_dir == o.out_dir &&
           target == o.target && model == o.model && loss == o.loss &&
           train.batch == o.train.batch && train.steps == o.train.steps &&
           train.lr == o.train.lr && train.prior_lr == o.train.prior_lr &&
           train.clip == o.train.clip &&  // train.seed is derived from `seed`

           train.eval_interval == o.train.eval_interval &&
           train.eval_batch == o.train.eval_batch &&
           train.running_window == o.train.running_window && refine == o.refine &&
           smc == o.smc;
  }
};

namespace detail {

inline Method method_from_name(const std::string& s) {
  if (s == "dis") return Method::DIS;
  if (s == "mcd") return Method::MCD;
  if (s == "cmcd") return Method::CMCD;
  if (s == "dbs") return Method::DBS;
  if (s == "none") return Method::NONE;
  throw ConfigError("unknown method '" + s + "'");
}

inline PriorKind prior_from_name(const std::string& s) {
  if (s == "fixed") return PriorKind::Fixed;
  if (s == "gaussian") return PriorKind::Gaussian;
  if (s == "gmp") return PriorKind::Mixture;
  throw ConfigError("unknown prior kind '" + s + "'");
}

inline LossKind loss_from_name(const std::string& s) {
  if (s == "kl") return LossKind::KL;
  if (s == "logvar") return LossKind::LogVariance;
  throw ConfigError("unknown loss '" + s + "'");
}

inline std::string loss_name(LossKind k) {
  return k == LossKind::KL ? "kl" : "logvar";
}

struct TomlReader {
  const toml::Table* t;

  const toml::Value* find(const std::string& key) const {
    auto it = t->find(key);
    return it == t->end() ? nullptr : &it->second;
  }
  std::string str(const std::string& key, const std::string& dflt) const {
    const toml::Value* v = find(key);
    if (!v) return dflt;
    if (v->kind != toml::Value::String) throw ConfigError(key + ": expected a string");
    return v->str;
  }
  double num(const std::string& key, double dflt) const {
    const toml::Value* v = find(key);
    if (!v) return dflt;
    if (v->kind != toml::Value::Number) throw ConfigError(key + ": expected a number");
    return v->num;
  }
  std::size_t uint(const std::string& key, std::size_t dflt) const {
    double d = num(key, static_cast<double>(dflt));
    if (d < 0 || d != std::floor(d)) throw ConfigError(key + ": expected a non-negative integer");
    return static_cast<std::size_t>(d);
  }
  bool flag(const std::string& key, bool dflt) const {
    const toml::Value* v = find(key);
    if (!v) return dflt;
    if (v->kind != toml::Value::Boolean) throw ConfigError(key + ": expected true/false");
    return v->boolean;
  }
};

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
  toml::Table t = toml::parse(text);
  detail::TomlReader r{&t};
  ExperimentConfig c;
  c.algorithm = r.str("algorithm", c.algorithm);
  if (c.algorithm != "train" && c.algorithm != "smc")
    throw ConfigError("algorithm must be 'train' or 'smc'");
  c.seed = static_cast<std::uint64_t>(r.uint("seed", 0));
  c.out_dir = r.str("out_dir", c.out_dir);

  c.target.name = r.str("target.name", c.target.name);
  c.target.mean = r.num("target.mean", c.target.mean);
  c.target.variance = r.num("target.variance", c.target.variance);
  c.target.dim = r.uint("target.dim", c.target.dim);
  c.target.gmm_seed = r.uint("target.gmm_seed", c.target.gmm_seed);
  c.target.dataset = r.str("target.dataset", c.target.dataset);
  c.target.label_col = r.str("target.label_col", c.target.label_col);
  c.target.lattice = r.uint("target.lattice", c.target.lattice);
  c.target.kappa = r.num("target.kappa", c.target.kappa);
  c.target.lambda = r.num("target.lambda", c.target.lambda);

  c.model.method = detail::method_from_name(r.str("model.method", method_name(c.model.method)));
  c.model.prior = detail::prior_from_name(r.str("model.prior", prior_kind_name(c.model.prior)));
  c.model.K = r.uint("model.K", c.model.K);
  c.model.N = r.uint("model.N", c.model.N);
  c.model.sigma = r.num("model.sigma", c.model.sigma);
  c.model.score_head = r.flag("model.score_head", c.model.score_head);
  c.model.hidden = r.uint("model.hidden", c.model.hidden);
  c.model.prior_mean_scale = r.num("model.prior_mean_scale", c.model.prior_mean_scale);
  c.model.prior_init_std = r.num("model.prior_init_std", c.model.prior_init_std);

  c.loss = detail::loss_from_name(r.str("train.loss", detail::loss_name(c.loss)));
  c.train.batch = r.uint("train.batch", c.train.batch);
  c.train.steps = r.uint("train.steps", c.train.steps);
  c.train.lr = r.num("train.lr", c.train.lr);
  c.train.prior_lr = r.num("train.prior_lr", c.train.prior_lr);
  c.train.clip = r.num("train.clip", c.train.clip);
  c.train.eval_interval = r.uint("train.eval_interval", c.train.eval_interval);
  c.train.eval_batch = r.uint("train.eval_batch", c.train.eval_batch);
  c.train.running_window = r.uint("train.running_window", c.train.running_window);
  c.train.seed = c.seed;

  c.refine.enabled = r.flag("refine.enabled", c.refine.enabled);
  auto& rs = c.refine.schedule;
  rs.interval = r.uint("refine.interval", rs.interval);
  rs.k_max = r.uint("refine.k_max", rs.k_max);
  rs.new_std = r.num("refine.new_std", rs.new_std);
  rs.n_chains = r.uint("refine.n_chains", rs.n_chains);
  rs.n_steps = r.uint("refine.n_steps", rs.n_steps);
  rs.chain_init_std = r.num("refine.chain_init_std", rs.chain_init_std);
  rs.sigma_tilde = r.num("refine.sigma_tilde", rs.sigma_tilde);
  rs.mala_dt = r.num("refine.mala_dt", rs.mala_dt);
  rs.rollouts = r.uint("refine.rollouts", rs.rollouts);
  rs.forward_heuristic = r.flag("refine.forward_heuristic", rs.forward_heuristic);

  auto& sc = c.smc.cfg;
  sc.m = r.uint("smc.m", sc.m);
  sc.n_anneal = r.uint("smc.n_anneal", sc.n_anneal);
  sc.init_scale = r.num("smc.init_scale", sc.init_scale);
  sc.resample_threshold = r.num("smc.resample_threshold", sc.resample_threshold);
  sc.hmc.leapfrog = r.uint("smc.leapfrog", sc.hmc.leapfrog);
  sc.hmc.step_early = r.num("smc.step_early", sc.hmc.step_early);
  sc.hmc.step_late = r.num("smc.step_late", sc.hmc.step_late);
  sc.hmc.beta_split = r.num("smc.beta_split", sc.hmc.beta_split);

  // structural invariants
  if (c.model.K < 1) throw ConfigError("model.K must be >= 1");
  if (c.model.prior != PriorKind::Mixture && c.model.K != 1)
    throw ConfigError("model.K > 1 requires prior = \"gmp\"");
  if (c.model.method == Method::NONE && c.model.N != 0)
    throw ConfigError("method 'none' requires N = 0");
  if (c.model.method != Method::NONE && c.model.N == 0)
    throw ConfigError("N = 0 requires method 'none'");
  if (c.refine.enabled && c.model.prior != PriorKind::Mixture)
    throw ConfigError("refinement requires prior = \"gmp\"");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  std::string s = ss.str();
  // ensure the token re-parses as a number (not an integer-looking string issue)
  return s;
}

inline std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream o;
  auto num = [&](const char* k, double v) { o << k << " = " << format_double(v) << "\n"; };
  auto uns = [&](const char* k, std::size_t v) { o << k << " = " << v << "\n"; };
  auto str = [&](const char* k, const std::string& v) { o << k << " = \"" << v << "\"\n"; };
  auto flg = [&](const char* k, bool v) { o << k << " = " << (v ? "true" : "false") << "\n"; };

  str("algorithm", c.algorithm);
  uns("seed", static_cast<std::size_t>(c.seed));
  str("out_dir", c.out_dir);

  o << "\n[target]\n";
  str("name", c.target.name);
  num("mean", c.target.mean);
  num("variance", c.target.variance);
  uns("dim", c.target.dim);
  uns("gmm_seed", static_cast<std::size_t>(c.target.gmm_seed));
  str("dataset", c.target.dataset);
  str("label_col", c.target.label_col);
  uns("lattice", c.target.lattice);
  num("kappa", c.target.kappa);
  num("lambda", c.target.lambda);

  o << "\n[model]\n";
  str("method", method_name(c.model.method));
  str("prior", prior_kind_name(c.model.prior));
  uns("K", c.model.K);
  uns("N", c.model.N);
  num("sigma", c.model.sigma);
  flg("score_head", c.model.score_head);
  uns("hidden", c.model.hidden);
  num("prior_mean_scale", c.model.prior_mean_scale);
  num("prior_init_std", c.model.prior_init_std);

  o << "\n[train]\n";
  str("loss", detail::loss_name(c.loss));
  uns("batch", c.train.batch);
  uns("steps", c.train.steps);
  num("lr", c.train.lr);
  num("prior_lr", c.train.prior_lr);
  num("clip", c.train.clip);
  uns("eval_interval", c.train.eval_interval);
  uns("eval_batch", c.train.eval_batch);
  uns("running_window", c.train.running_window);

  o << "\n[refine]\n";
  flg("enabled", c.refine.enabled);
  uns("interval", c.refine.schedule.interval);
  uns("k_max", c.refine.schedule.k_max);
  num("new_std", c.refine.schedule.new_std);
  uns("n_chains", c.refine.schedule.n_chains);
  uns("n_steps", c.refine.schedule.n_steps);
  num("chain_init_std", c.refine.schedule.chain_init_std);
  num("sigma_tilde", c.refine.schedule.sigma_tilde);
  num("mala_dt", c.refine.schedule.mala_dt);
  uns("rollouts", c.refine.schedule.rollouts);
  flg("forward_heuristic", c.refine.schedule.forward_heuristic);

  o << "\n[smc]\n";
  uns("m", c.smc.cfg.m);
  uns("n_anneal", c.smc.cfg.n_anneal);
  num("init_scale", c.smc.cfg.init_scale);
  num("resample_threshold", c.smc.cfg.resample_threshold);
  uns("leapfrog", c.smc.cfg.hmc.leapfrog);
  num("step_early", c.smc.cfg.hmc.step_early);
  num("step_late", c.smc.cfg.hmc.step_late);
  num("beta_split", c.smc.cfg.hmc.beta_split);
  return o.str();
}

/// Builds the target named by the config.
inline std::unique_ptr<Target> make_target(const TargetSpec& s) {
  if (s.name == "gaussian")
    return std::make_unique<IsotropicGaussian>(Tensor(Shape{s.dim}, s.mean), s.variance);
  if (s.name == "funnel") return std::make_unique<Funnel>();
  if (s.name == "gmm") return std::make_unique<RandomGmmTarget>(s.gmm_seed);
  if (s.name == "logreg") {
    if (s.dataset.empty())
      return std::make_unique<BayesLogReg>(BayesLogReg::synthetic(0));
    return std::make_unique<BayesLogReg>(load_csv_dataset(s.dataset, s.label_col));
  }
  if (s.name == "phi4") return std::make_unique<Phi4Lattice>(s.lattice, s.kappa, s.lambda);
  throw ConfigError("unknown target '" + s.name + "'");
}

/// Builds a sampler model for the config; prior = fixed freezes the prior
/// parameters so the optimizer leaves them untouched.
inline SamplerModel make_model(const ExperimentConfig& c, const Target& tg, Rng& init_rng) {
  DiffusionConfig dc{c.model.method, c.model.N, c.model.sigma, c.model.score_head,
                     c.model.hidden};
  SamplerModel M(dc, tg, c.model.K, init_rng, c.model.prior_mean_scale, c.model.prior_init_std);
  if (c.model.prior == PriorKind::Fixed)
    for (Parameter* p : M.prior_parameters()) p->requires_grad = false;
  return M;
}

}  // namespace dsam
