#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include <algorithm>

#include "dsam/rng.hpp"
#include "dsam/targets.hpp"

namespace dsam {

/// Hamiltonian mutation kernel: fixed leapfrog count with two step-size
/// regimes split at the annealing midpoint (smaller steps once the harder
/// late-annealing densities dominate).
struct HmcKernel {
  std::size_t leapfrog = 5;
  double step_early = 0.1;    // beta < beta_split
  double step_late = 0.001;   // beta >= beta_split
  double beta_split = 0.5;

  double step_for(double beta) const { return beta < beta_split ? step_early : step_late; }
};

struct SmcConfig {
  std::size_t m = 2000;
  std::size_t n_anneal = 128;
  double init_scale = 1.0;          // particles start from N(0, init_scale^2 I)
  double resample_threshold = 0.3;  // on normalized ESS
  HmcKernel hmc;
};

struct SmcResult {
  Tensor particles;            // [m, d]
  std::vector<double> log_w;   // normalized (logsumexp = 0)
  double log_z = 0;
  std::size_t n_resamples = 0;
  double mean_acceptance = 0;  // across all mutation attempts
};

/// Systematic resampling: one uniform offset, m evenly spaced pointers into
/// the cumulative weights. Input log weights must be normalized.
inline std::vector<std::size_t> systematic_resample(const std::vector<double>& norm_log_w,
                                                    Rng& rng) {
  std::size_t m = norm_log_w.size();
  if (m == 0) throw ConfigError("systematic_resample: empty weights");
  std::vector<std::size_t> idx(m);
  double u = rng.uniform() / static_cast<double>(m);
  double cum = 0;
  std::size_t i = 0;
  for (std::size_t k = 0; k < m; ++k) {
    double point = u + static_cast<double>(k) / static_cast<double>(m);
    while (cum + std::exp(norm_log_w[i]) < point && i + 1 < m) {
      cum += std::exp(norm_log_w[i]);
      ++i;
    }
    idx[k] = i;
  }
  return idx;
}

/// Velocity-Verlet integration of Hamilton's equations for -log-density
/// potential; mutates x and p in place.
inline void leapfrog(std::vector<double>& x, std::vector<double>& p,
                     const std::function<std::vector<double>(const std::vector<double>&)>& grad,
                     double eps, std::size_t n_steps) {
  if (eps == 0.0 || n_steps == 0) return;
  std::vector<double> g = grad(x);
  for (std::size_t j = 0; j < p.size(); ++j) p[j] += 0.5 * eps * g[j];
  for (std::size_t l = 0; l < n_steps; ++l) {
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += eps * p[j];
    g = grad(x);
    double half = (l + 1 == n_steps) ? 0.5 : 1.0;
    for (std::size_t j = 0; j < p.size(); ++j) p[j] += half * eps * g[j];
  }
}

struct HmcOutcome {
  std::vector<double> x;
  bool accepted = false;
  double delta_h = 0;
};

/// One Hamiltonian Monte Carlo update of a single state. Non-finite proposals
/// are rejected.
inline HmcOutcome hmc_step(const std::vector<double>& x,
                           const std::function<double(const std::vector<double>&)>& logdens,
                           const std::function<std::vector<double>(const std::vector<double>&)>& grad,
                           double eps, std::size_t n_leapfrog, Rng& rng) {
  HmcOutcome out;
  std::vector<double> p(x.size());
  for (auto& pj : p) pj = rng.normal();
  double ke0 = 0;
  for (double pj : p) ke0 += 0.5 * pj * pj;
  double h0 = -logdens(x) + ke0;

  std::vector<double> xp = x, pp = p;
  leapfrog(xp, pp, grad, eps, n_leapfrog);
  double ke1 = 0;
  bool finite = true;
  for (double pj : pp) {
    if (!std::isfinite(pj)) finite = false;
    ke1 += 0.5 * pj * pj;
  }
  for (double xj : xp)
    if (!std::isfinite(xj)) finite = false;
  double h1 = finite ? -logdens(xp) + ke1 : std::numeric_limits<double>::infinity();
  out.delta_h = h1 - h0;
  if (finite && std::log(rng.uniform()) < h0 - h1) {
    out.x = std::move(xp);
    out.accepted = true;
  } else {
    out.x = x;
  }
  return out;
}

namespace detail {

inline double init_logpdf_row(const Tensor& X, std::size_t i, double s) {
  double lp = 0, s2 = s * s;
  for (std::size_t j = 0; j < X.dim(1); ++j) {
    double x = X.at(i, j);
    lp += -0.5 * x * x / s2 - 0.5 * (kLog2Pi + std::log(s2));
  }
  return lp;
}

}  // namespace detail

/// Per-temperature mutation hook; the default applies one HMC step per
/// particle targeting the current annealed density. Injectable so tests can
/// disable or replace mutation.
using MutationHook =
    std::function<double(Tensor& X, double beta, Rng& rng)>;  // returns acceptance rate

/// Annealed importance sampling with systematic resampling: geometric path
/// from N(0, init_scale^2 I) to the target, one mutation per temperature.
inline SmcResult smc_run(const Target& tg, const SmcConfig& cfg, Rng& rng,
                         const MutationHook& mutate_override = nullptr) {
  std::size_t m = cfg.m, d = tg.dim(), N = cfg.n_anneal;
  if (m == 0 || N == 0) throw ConfigError("smc_run: empty particle system or schedule");
  double s = cfg.init_scale;

  auto annealed_grad = [&](const Tensor& X, double beta) {
    Tensor g = grad_log_rho_batch(tg, X);
    double s2 = s * s;
    for (std::size_t i = 0; i < X.dim(0); ++i)
      for (std::size_t j = 0; j < d; ++j)
        g.at(i, j) = (1.0 - beta) * (-X.at(i, j) / s2) + beta * g.at(i, j);
    return g;
  };
  auto annealed_logdens = [&](const Tensor& X, double beta) {
    Tensor lr = log_rho_batch(tg, X);
    for (std::size_t i = 0; i < X.dim(0); ++i)
      lr[i] = (1.0 - beta) * detail::init_logpdf_row(X, i, s) + beta * lr[i];
    return lr;
  };

  MutationHook mutate = mutate_override;
  if (!mutate) {
    mutate = [&](Tensor& X, double beta, Rng& r) -> double {
      double eps = cfg.hmc.step_for(beta);
      std::size_t L = cfg.hmc.leapfrog;
      Tensor P = r.normal_tensor(Shape{m, d});
      Tensor lg0 = annealed_logdens(X, beta);
      // batched leapfrog across all particles
      Tensor Xp = X, Pp = P;
      Tensor g = annealed_grad(Xp, beta);
      for (std::size_t i = 0; i < m * d; ++i) Pp[i] += 0.5 * eps * g[i];
      for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t i = 0; i < m * d; ++i) Xp[i] += eps * Pp[i];
        g = annealed_grad(Xp, beta);
        double half = (l + 1 == L) ? 0.5 : 1.0;
        for (std::size_t i = 0; i < m * d; ++i) Pp[i] += half * eps * g[i];
      }
      Tensor lg1 = annealed_logdens(Xp, beta);
      std::size_t accepted = 0;
      for (std::size_t i = 0; i < m; ++i) {
        double ke0 = 0, ke1 = 0;
        bool finite = true;
        for (std::size_t j = 0; j < d; ++j) {
          ke0 += 0.5 * P.at(i, j) * P.at(i, j);
          ke1 += 0.5 * Pp.at(i, j) * Pp.at(i, j);
          if (!std::isfinite(Xp.at(i, j)) || !std::isfinite(Pp.at(i, j))) finite = false;
        }
        double h0 = -lg0[i] + ke0;
        double h1 = finite && std::isfinite(lg1[i])
                        ? -lg1[i] + ke1
                        : std::numeric_limits<double>::infinity();
        if (std::log(r.uniform()) < h0 - h1) {
          ++accepted;
          for (std::size_t j = 0; j < d; ++j) X.at(i, j) = Xp.at(i, j);
        }
      }
      return static_cast<double>(accepted) / static_cast<double>(m);
    };
  }

  Tensor X = rng.normal_tensor(Shape{m, d}, 0.0, s);
  std::vector<double> log_w(m, -std::log(static_cast<double>(m)));  // normalized
  double log_z = 0;
  std::size_t n_resamples = 0;
  double acc_sum = 0;

  auto lse = [](const std::vector<double>& v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double sum = 0;
    for (double x : v) sum += std::exp(x - mx);
    return mx + std::log(sum);
  };

  for (std::size_t n = 0; n < N; ++n) {
    double beta0 = static_cast<double>(n) / static_cast<double>(N);
    double beta1 = static_cast<double>(n + 1) / static_cast<double>(N);

    Tensor lr = log_rho_batch(tg, X);
    std::vector<double> shifted(m);
    for (std::size_t i = 0; i < m; ++i) {
      double inc = (beta1 - beta0) * (lr[i] - detail::init_logpdf_row(X, i, s));
      if (!std::isfinite(inc)) inc = -std::numeric_limits<double>::infinity();
      shifted[i] = log_w[i] + inc;
    }
    double step_lz = lse(shifted);
    if (!std::isfinite(step_lz))
      throw NumericAbort("smc_run: all weights degenerate at temperature " + std::to_string(n));
    log_z += step_lz;
    for (std::size_t i = 0; i < m; ++i) log_w[i] = shifted[i] - step_lz;

    // normalized ESS
    std::vector<double> twice(m);
    for (std::size_t i = 0; i < m; ++i) twice[i] = 2.0 * log_w[i];
    double ess_norm = std::exp(-lse(twice)) / static_cast<double>(m);
    if (ess_norm < cfg.resample_threshold) {
      auto idx = systematic_resample(log_w, rng);
      Tensor Xn(Shape{m, d});
      for (std::size_t k = 0; k < m; ++k)
        for (std::size_t j = 0; j < d; ++j) Xn.at(k, j) = X.at(idx[k], j);
      X = std::move(Xn);
      std::fill(log_w.begin(), log_w.end(), -std::log(static_cast<double>(m)));
      ++n_resamples;
    }

    acc_sum += mutate(X, beta1, rng);
  }

  SmcResult out;
  out.particles = std::move(X);
  out.log_w = std::move(log_w);
  out.log_z = log_z;
  out.n_resamples = n_resamples;
  out.mean_acceptance = acc_sum / static_cast<double>(N);
  return out;
}

}  // namespace dsam
