#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "dsam/control.hpp"
#include "dsam/prior.hpp"
#include "dsam/rng.hpp"
#include "dsam/tape.hpp"
#include "dsam/targets.hpp"

namespace dsam {

enum class Method { DIS, MCD, CMCD, DBS, NONE };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::DIS: return "dis";
    case Method::MCD: return "mcd";
    case Method::CMCD: return "cmcd";
    case Method::DBS: return "dbs";
    case Method::NONE: return "none";
  }
  return "?";
}

struct DiffusionConfig {
  Method method = Method::DIS;
  std::size_t N = 8;        // diffusion steps; 0 = plain variational mode
  double sigma = 1.0;       // diffusion coefficient
  bool use_score_head = false;
  std::size_t hidden = 128;  // control-net width
};

/// Trainable cosine-square step sizes: dt_n = a * cos^2((pi/2) n/N) with
/// a = softplus(raw). dt_0 equals a exactly and dt decreases in n.
class StepSchedule {
 public:
  explicit StepSchedule(std::size_t N, double init_a = 0.1)
      : N_(N), raw_(Tensor::scalar(inv_softplus(init_a)), "schedule.raw_a") {}

  std::size_t steps() const { return N_; }
  std::vector<Parameter*> parameters() { return {&raw_}; }

  Var amplitude(Tape& t) const { return softplus(t.watch(const_cast<Parameter&>(raw_))); }
  double amplitude_value() const { return softplus_val(raw_.value[0]); }

  double cos2(std::size_t n) const {
    if (n >= N_) throw DomainError("StepSchedule: step index out of range");
    double c = std::cos(0.5 * M_PI * static_cast<double>(n) / static_cast<double>(N_));
    return c * c;
  }
  Var dt(Tape& t, std::size_t n) const { return amplitude(t) * cos2(n); }
  double dt_value(std::size_t n) const { return amplitude_value() * cos2(n); }

 private:
  std::size_t N_;
  Parameter raw_;
};

/// log N(x; mean, var * I) for a batch [m, d] with a scalar (possibly
/// trainable) variance.
inline Var diag_gauss_logpdf(Var x, Var mean, Var var_scalar) {
  std::size_t d = x.val().dim(1);
  Var quad = sum(square(x - mean), 1) / var_scalar * (-0.5);
  return quad - (log(var_scalar) + kLog2Pi) * (0.5 * static_cast<double>(d));
}

namespace detail {

/// Zeroes the listed rows in both the value and the adjoint, detaching
/// diverged paths without poisoning the rest of the batch with non-finite
/// numbers.
inline Var zero_rows(Var x, std::shared_ptr<std::vector<std::size_t>> rows) {
  Tensor out = x.val();
  std::size_t d = out.dim(1);
  for (std::size_t r : *rows)
    for (std::size_t j = 0; j < d; ++j) out.at(r, j) = 0.0;
  Tape& t = *x.tape;
  return t.push(std::move(out), t.requires_grad(x.id), [x, rows, d](Tape& t, int self) {
    Tensor g = t.grad(self);
    for (std::size_t r : *rows)
      for (std::size_t j = 0; j < d; ++j) g.at(r, j) = 0.0;
    t.accumulate(x.id, g);
  });
}

}  // namespace detail

/// A sampler: target, trainable prior and step schedule, and the method's
/// control networks. CMCD shares one network between both kernels; DIS has a
/// forward control only; MCD a backward control only; DBS both.
class SamplerModel {
 public:
  SamplerModel(DiffusionConfig cfg, const Target& target, std::size_t K, Rng& init_rng,
               double prior_mean_scale = 1.0, double prior_init_std = 1.0)
      : cfg(cfg),
        target(&target),
        prior(target.dim(), K, init_rng, prior_mean_scale, prior_init_std),
        schedule(cfg.N) {
    if (cfg.sigma <= 0) throw ConfigError("sigma must be positive");
    if (cfg.method == Method::NONE && cfg.N != 0)
      throw ConfigError("method 'none' requires N = 0");
    if (cfg.method != Method::NONE && cfg.N == 0)
      throw ConfigError("N = 0 requires method 'none'");
    bool needs_u = cfg.method == Method::DIS || cfg.method == Method::CMCD ||
                   cfg.method == Method::DBS;
    bool needs_v = cfg.method == Method::MCD || cfg.method == Method::DBS;
    if (needs_u) u.emplace(target.dim(), init_rng, "control_u", cfg.hidden);
    if (needs_v) v.emplace(target.dim(), init_rng, "control_v", cfg.hidden);
    if (cfg.use_score_head) {
      if (needs_u) gate_u.emplace(cfg.N, "control_u.gate");
      if (needs_v) gate_v.emplace(cfg.N, "control_v.gate");
    }
  }

  DiffusionConfig cfg;
  const Target* target;
  MixturePrior prior;
  StepSchedule schedule;
  std::optional<ControlNet> u, v;
  std::optional<StepGate> gate_u, gate_v;

  std::vector<Parameter*> prior_parameters() { return prior.parameters(); }
  std::vector<Parameter*> other_parameters() {
    std::vector<Parameter*> ps = schedule.parameters();
    auto extend = [&](std::vector<Parameter*> more) {
      ps.insert(ps.end(), more.begin(), more.end());
    };
    if (u) extend(u->parameters());
    if (v) extend(v->parameters());
    if (gate_u) extend(gate_u->parameters());
    if (gate_v) extend(gate_v->parameters());
    return ps;
  }
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> ps = prior_parameters();
    auto more = other_parameters();
    ps.insert(ps.end(), more.begin(), more.end());
    return ps;
  }

  /// Score of the annealed bridge pi_n between prior (n=0) and target (n=N).
  Var annealed_score(Tape& t, Var x, std::size_t n) const {
    double beta = cfg.N == 0 ? 1.0 : static_cast<double>(n) / static_cast<double>(cfg.N);
    if (beta >= 1.0) return target->grad_log_rho(t, x);
    if (beta <= 0.0) return prior.score(t, x);
    return prior.score(t, x) * (1.0 - beta) + target->grad_log_rho(t, x) * beta;
  }

  Var annealed_logdens(Tape& t, Var x, std::size_t n) const {
    double beta = cfg.N == 0 ? 1.0 : static_cast<double>(n) / static_cast<double>(cfg.N);
    if (beta >= 1.0) return target->log_rho(t, x);
    if (beta <= 0.0) return prior.log_density(t, x);
    return prior.log_density(t, x) * (1.0 - beta) + target->log_rho(t, x) * beta;
  }

  /// Base drift f(x, n) of the forward process.
  Var drift(Tape& t, Var x, std::size_t n) const {
    double s2 = cfg.sigma * cfg.sigma;
    switch (cfg.method) {
      case Method::DIS: return prior.score(t, x) * (-s2);
      case Method::MCD:
      case Method::CMCD: return annealed_score(t, x, n) * s2;
      case Method::DBS: return target->grad_log_rho(t, x) * s2;
      case Method::NONE: break;
    }
    throw ConfigError("drift undefined for method 'none'");
  }

  Var control_u(Tape& t, Var x, std::size_t n) const {
    Var out = u->eval(t, x, n, cfg.N);
    if (gate_u) out = out + gate_u->at(t, n) * annealed_score(t, stop_gradient(x), n);
    return out;
  }
  Var control_v(Tape& t, Var x, std::size_t n) const {
    Var out = v->eval(t, x, n, cfg.N);
    if (gate_v) out = out + gate_v->at(t, n) * annealed_score(t, stop_gradient(x), n);
    return out;
  }

  /// Mean of the forward kernel p(x_{n+1} | x_n = x); dt is the step's size.
  Var forward_mean(Tape& t, Var x, std::size_t n, Var dt) const {
    Var f = drift(t, x, n);
    if (u) f = f + control_u(t, x, n) * cfg.sigma;
    return x + f * dt;
  }

  /// Mean of the backward kernel p(x_n | x_{n+1} = y) for the transition
  /// n -> n+1; the drift is evaluated at y with time index n+1.
  Var backward_mean(Tape& t, Var y, std::size_t n, Var dt) const {
    double s2 = cfg.sigma * cfg.sigma;
    std::size_t np1 = n + 1;
    switch (cfg.method) {
      case Method::DIS:
        return y + prior.score(t, y) * (s2)*dt;
      case Method::MCD: {
        Var b = annealed_score(t, y, np1) * s2 - control_v(t, y, np1) * cfg.sigma;
        return y - b * dt;
      }
      case Method::CMCD: {
        Var b = annealed_score(t, y, np1) * s2 - control_u(t, y, np1) * cfg.sigma;
        return y + b * dt;
      }
      case Method::DBS: {
        Var b = target->grad_log_rho(t, y) * s2 - control_v(t, y, np1) * cfg.sigma;
        return y - b * dt;
      }
      case Method::NONE: break;
    }
    throw ConfigError("backward kernel undefined for method 'none'");
  }
};

/// One simulated batch with its accumulated importance-weight terms.
struct SimResult {
  Var log_w;                       // [m]; diverged rows are zeroed and flagged
  Var x0;                          // [m, d]
  Var x_final;                     // [m, d]
  std::vector<std::size_t> comp;   // prior component per path
  std::vector<char> finite;        // per-path validity flag
  std::size_t n_bad = 0;
  std::vector<Tensor> states;      // x_0..x_N values, if requested
};

/// Runs the forward process and accumulates
///   log w = log rho(x_N) - log p0(x_0)
///         + sum_n [log back(x_n | x_{n+1}) - log fwd(x_{n+1} | x_n)].
/// With attached=true the whole expression is differentiable through the
/// sampled path (reparameterization); with attached=false every state is cut
/// from the graph but the densities stay live in the parameters.
inline SimResult simulate_forward(Tape& t, const SamplerModel& M, Rng& rng, std::size_t m,
                                  bool attached, bool store_states = false) {
  if (m == 0) throw ConfigError("simulate_forward: empty batch");
  const std::size_t d = M.target->dim();
  const double two_s2 = 2.0 * M.cfg.sigma * M.cfg.sigma;

  SimResult res;
  res.finite.assign(m, 1);

  auto draw = M.prior.sample_reparam(t, rng, m);
  res.comp = std::move(draw.comp);
  Var x = attached ? draw.x0 : t.constant(draw.x0.val());
  res.x0 = x;
  Var logw = M.prior.log_density(t, x) * (-1.0);
  if (store_states) res.states.push_back(x.val());

  auto flag_bad = [&](const Tensor& v) {
    auto rows = std::make_shared<std::vector<std::size_t>>();
    for (std::size_t i = 0; i < m; ++i) {
      if (!res.finite[i]) {
        rows->push_back(i);
        continue;
      }
      for (std::size_t j = 0; j < d; ++j)
        if (!std::isfinite(v.at(i, j))) {
          res.finite[i] = 0;
          rows->push_back(i);
          break;
        }
    }
    return rows;
  };

  for (std::size_t n = 0; n < M.cfg.N; ++n) {
    Var dt = M.schedule.dt(t, n);
    Var var_scalar = dt * two_s2;
    Var mean_f = M.forward_mean(t, x, n, dt);
    Var eps = t.constant(rng.normal_tensor(Shape{m, d}));
    Var x_next = mean_f + sqrt(var_scalar) * eps;
    if (!attached) x_next = t.constant(x_next.val());

    auto rows = flag_bad(x_next.val());
    if (!rows->empty()) x_next = detail::zero_rows(x_next, rows);

    Var log_f = diag_gauss_logpdf(x_next, mean_f, var_scalar);
    Var mean_b = M.backward_mean(t, x_next, n, dt);
    Var log_b = diag_gauss_logpdf(x, mean_b, var_scalar);
    logw = logw + log_b - log_f;
    x = x_next;
    if (store_states) res.states.push_back(x.val());
  }

  logw = logw + M.target->log_rho(t, x);
  res.n_bad = static_cast<std::size_t>(
      std::count(res.finite.begin(), res.finite.end(), 0));
  if (res.n_bad * 10 > m)
    throw NumericAbort("simulate_forward: " + std::to_string(res.n_bad) + "/" +
                       std::to_string(m) + " paths diverged");
  res.log_w = logw;
  res.x_final = x;
  return res;
}

/// Scores candidate terminal points by rolling the backward process out of
/// each candidate and averaging the accumulated weight terms over R rollouts
/// (values only, no gradients). High scores mark regions of high target mass
/// that the current model explains poorly.
inline Tensor backward_refinement_scores(const SamplerModel& M, const Tensor& candidates,
                                         Rng& rng, std::size_t rollouts = 4) {
  if (candidates.ndim() != 2 || candidates.dim(1) != M.target->dim())
    throw ShapeError("refinement scores: bad candidate shape");
  std::size_t c = candidates.dim(0), d = candidates.dim(1);
  const double two_s2 = 2.0 * M.cfg.sigma * M.cfg.sigma;
  Tensor acc(Shape{c}, 0.0);

  for (std::size_t r = 0; r < rollouts; ++r) {
    Tape t;
    Var y = t.constant(candidates);
    Var score = M.target->log_rho(t, y);
    for (std::size_t n = M.cfg.N; n-- > 0;) {
      Var dt = M.schedule.dt(t, n);
      Var var_scalar = dt * two_s2;
      Var mean_b = M.backward_mean(t, y, n, dt);
      Var eps = t.constant(rng.normal_tensor(Shape{c, d}));
      Var x_prev = t.constant((mean_b + sqrt(var_scalar) * eps).val());
      Var log_b = diag_gauss_logpdf(x_prev, mean_b, var_scalar);
      Var log_f = diag_gauss_logpdf(y, M.forward_mean(t, x_prev, n, dt), var_scalar);
      score = score + log_b - log_f;
      y = x_prev;
    }
    score = score - M.prior.log_density(t, y);
    const Tensor& s = score.val();
    for (std::size_t i = 0; i < c; ++i) acc[i] += s[i];
  }
  for (std::size_t i = 0; i < c; ++i) acc[i] /= static_cast<double>(rollouts);
  return acc;
}

/// Long-run check that the uncontrolled process with drift sigma^2 * score
/// leaves the given 1-d density invariant: simulates chains started from
/// exact samples and returns the total-variation distance between the
/// post-burn-in histogram and the analytic density.
inline double stationarity_check(const std::function<double(double)>& score,
                                 const std::function<double(double)>& density,
                                 const std::vector<double>& init_states, double sigma,
                                 double dt, std::size_t n_steps, std::size_t burn_in,
                                 Rng& rng, double lo, double hi, std::size_t bins = 200) {
  if (n_steps == 0 || init_states.empty())
    throw ConfigError("stationarity_check: zero-length run");
  if (burn_in >= n_steps) throw ConfigError("stationarity_check: burn-in swallows the run");
  std::vector<double> x = init_states;
  std::vector<double> counts(bins, 0.0);
  double total = 0;
  double noise = sigma * std::sqrt(2.0 * dt);
  for (std::size_t s = 0; s < n_steps; ++s) {
    for (double& xi : x) {
      xi += sigma * sigma * score(xi) * dt + noise * rng.normal();
      if (!std::isfinite(xi)) throw NumericAbort("stationarity_check: chain diverged");
      if (s >= burn_in && xi > lo && xi < hi) {
        counts[static_cast<std::size_t>((xi - lo) / (hi - lo) * bins)] += 1.0;
      }
    }
    if (s >= burn_in) total += static_cast<double>(x.size());
  }
  // analytic bin masses by midpoint rule at sub-bin resolution
  double tv = 0;
  double w = (hi - lo) / static_cast<double>(bins);
  double q_out = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    double q = 0;
    for (int s = 0; s < 8; ++s) q += density(lo + (b + (s + 0.5) / 8.0) * w) * (w / 8.0);
    q_out += q;
    tv += std::abs(counts[b] / total - q);
  }
  tv += 1.0 - q_out;  // analytic mass outside the window vs ~0 empirical
  return 0.5 * tv;
}

}  // namespace dsam
