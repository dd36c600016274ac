#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "dsam/dynamics.hpp"
#include "dsam/num.hpp"
#include "dsam/tensor.hpp"

namespace dsam {

// ---------------------------------------------------------------------------
// Importance-weight summaries (all computed in log space)
// ---------------------------------------------------------------------------

inline void check_weights(const std::vector<double>& lw) {
  if (lw.empty()) throw DomainError("empty weight set");
}

inline double elbo(const std::vector<double>& lw) {
  check_weights(lw);
  return mean(lw);
}

inline double log_z_hat(const std::vector<double>& lw) {
  check_weights(lw);
  return logsumexp(lw) - std::log(static_cast<double>(lw.size()));
}

/// Normalized effective sample size (sum w)^2 / (m sum w^2), in (0, 1].
inline double ess(const std::vector<double>& lw) {
  check_weights(lw);
  std::vector<double> lw2(lw);
  for (double& v : lw2) v *= 2.0;
  return std::exp(2.0 * logsumexp(lw) - logsumexp(lw2) -
                  std::log(static_cast<double>(lw.size())));
}

// ---------------------------------------------------------------------------
// Entropy-regularized optimal transport between two sample clouds
// ---------------------------------------------------------------------------

struct SinkhornResult {
  double cost = 0;       // <P, C> transport cost
  bool converged = false;
  std::size_t iters = 0;
};

inline double median_pairwise_sq_dist(const Tensor& A, const Tensor& B) {
  std::size_t na = A.dim(0), nb = B.dim(0), d = A.dim(1);
  std::vector<double> c;
  c.reserve(na * nb);
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        double z = A.at(i, k) - B.at(j, k);
        s += z * z;
      }
      c.push_back(s);
    }
  std::nth_element(c.begin(), c.begin() + c.size() / 2, c.end());
  return c[c.size() / 2];
}

/// Log-domain Sinkhorn with uniform marginals and squared-Euclidean cost.
/// epsilon <= 0 selects the default 0.05 * median pairwise squared distance.
inline SinkhornResult sinkhorn(const Tensor& A, const Tensor& B, double epsilon = -1.0,
                               std::size_t max_iter = 1000, double tol = 1e-6) {
  if (A.ndim() != 2 || B.ndim() != 2 || A.dim(1) != B.dim(1))
    throw ShapeError("sinkhorn: sample clouds must share the dimension");
  std::size_t na = A.dim(0), nb = B.dim(0), d = A.dim(1);
  if (na == 0 || nb == 0) throw DomainError("sinkhorn: empty cloud");
  std::vector<double> C(na * nb);
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        double z = A.at(i, k) - B.at(j, k);
        s += z * z;
      }
      C[i * nb + j] = s;
    }
  if (epsilon <= 0) {
    std::vector<double> c(C);
    std::nth_element(c.begin(), c.begin() + c.size() / 2, c.end());
    epsilon = 0.05 * c[c.size() / 2];
    if (epsilon <= 0) epsilon = 1e-12;  // degenerate identical clouds
  }
  double log_mu = -std::log(static_cast<double>(na));
  double log_nu = -std::log(static_cast<double>(nb));
  std::vector<double> f(na, 0.0), g(nb, 0.0), row(nb), col(na);

  SinkhornResult res;
  for (std::size_t it = 0; it < max_iter; ++it) {
    // f_i = eps * (log mu_i - logsumexp_j (g_j - C_ij)/eps)
    for (std::size_t i = 0; i < na; ++i) {
      for (std::size_t j = 0; j < nb; ++j) row[j] = (g[j] - C[i * nb + j]) / epsilon;
      f[i] = epsilon * (log_mu - logsumexp(row));
    }
    for (std::size_t j = 0; j < nb; ++j) {
      for (std::size_t i = 0; i < na; ++i) col[i] = (f[i] - C[i * nb + j]) / epsilon;
      g[j] = epsilon * (log_nu - logsumexp(col));
    }
    // row-marginal violation after the g-update
    double viol = 0;
    for (std::size_t i = 0; i < na; ++i) {
      for (std::size_t j = 0; j < nb; ++j)
        row[j] = (f[i] + g[j] - C[i * nb + j]) / epsilon;
      viol = std::max(viol, std::abs(std::exp(logsumexp(row)) - std::exp(log_mu)));
    }
    res.iters = it + 1;
    if (viol < tol) {
      res.converged = true;
      break;
    }
  }
  double cost = 0;
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j)
      cost += std::exp((f[i] + g[j] - C[i * nb + j]) / epsilon) * C[i * nb + j];
  res.cost = cost;
  return res;
}

// ---------------------------------------------------------------------------
// Entropic mode coverage
// ---------------------------------------------------------------------------

/// Normalized entropy of nearest-center assignments: 1 = uniform coverage of
/// all centers, 0 = all samples on one center (and 0 by convention for a
/// single center).
inline double emc(const Tensor& samples, const Tensor& centers) {
  if (samples.ndim() != 2 || centers.ndim() != 2 || samples.dim(1) != centers.dim(1))
    throw ShapeError("emc: dimension mismatch");
  std::size_t m = samples.dim(0), M = centers.dim(0), d = samples.dim(1);
  if (m == 0) throw DomainError("emc: empty sample set");
  if (M == 0) throw DomainError("emc: no mode centers");
  if (M == 1) return 0.0;
  std::vector<double> q(M, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < M; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        double z = samples.at(i, k) - centers.at(j, k);
        s += z * z;
      }
      if (s < best_d) {
        best_d = s;
        best = j;
      }
    }
    q[best] += 1.0;
  }
  double h = 0;
  for (double c : q) {
    if (c == 0) continue;
    double p = c / static_cast<double>(m);
    h -= p * std::log(p);
  }
  return h / std::log(static_cast<double>(M));
}

// ---------------------------------------------------------------------------
// Time-integrated spectral norm of the control Jacobian
// ---------------------------------------------------------------------------

/// Spectral norm of a d x d matrix by power iteration on A^T A.
inline double spectral_norm(const std::vector<double>& A, std::size_t d, Rng& rng,
                            std::size_t iters = 20) {
  std::vector<double> v(d), av(d);
  double norm = 0;
  for (double& x : v) x = rng.normal();
  for (std::size_t it = 0; it < iters; ++it) {
    // av = A v
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += A[i * d + j] * v[j];
      av[i] = s;
    }
    // v = A^T av
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < d; ++i) s += A[i * d + j] * av[i];
      v[j] = s;
    }
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n == 0) return 0.0;
    for (double& x : v) x /= n;
    norm = std::sqrt(n);  // ||A^T A v|| -> sigma_max^2 at the fixed point
  }
  return norm;
}

/// Monte Carlo estimate of E[ sum_n ||d(sigma u)/dx||_2 dt_n ] over given
/// per-step state batches: per-sample Jacobians are assembled row by row from
/// vector-Jacobian sweeps (samples are independent through the map, so a
/// one-hot row seed for sample i reads off that sample's Jacobian row), then
/// reduced by power iteration. `eval(tape, x, n)` builds the control output.
template <class F>
double jacobian_spectral_sum(const std::vector<Tensor>& states,
                             const std::vector<double>& dts, F&& eval, double sigma) {
  if (states.size() < dts.size()) throw ShapeError("spectral sum: missing states");
  Rng pi_rng(1234);
  double total = 0;
  for (std::size_t n = 0; n < dts.size(); ++n) {
    std::size_t m = states[n].dim(0), d = states[n].dim(1);
    Tape t;
    Var x = t.push(states[n], true, nullptr);
    Var out = eval(t, x, n);
    double step_mean = 0;
    std::vector<double> J(d * d);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t r = 0; r < d; ++r) {
        Tensor seed(Shape{m, d}, 0.0);
        seed.at(i, r) = 1.0;
        Tensor g = t.vjp(out, seed, x);
        for (std::size_t c = 0; c < d; ++c) J[r * d + c] = g.at(i, c);
      }
      step_mean += sigma * spectral_norm(J, d, pi_rng);
    }
    total += dts[n] * step_mean / static_cast<double>(m);
  }
  return total;
}

/// The spectral-sum metric for a sampler's own control along a fresh forward
/// rollout.
inline double control_spectral_norm(const SamplerModel& M, Rng& traj_rng,
                                    std::size_t n_samples) {
  if (!M.u && !M.v) return 0.0;
  const ControlNet& net = M.u ? *M.u : *M.v;
  Tape sim_tape;
  auto res = simulate_forward(sim_tape, M, traj_rng, n_samples, false, true);
  std::vector<double> dts;
  for (std::size_t n = 0; n < M.cfg.N; ++n) dts.push_back(M.schedule.dt_value(n));
  return jacobian_spectral_sum(
      res.states, dts,
      [&](Tape& t, Var x, std::size_t n) { return net.eval(t, x, n, M.cfg.N); },
      M.cfg.sigma);
}

// ---------------------------------------------------------------------------
// Lattice summaries
// ---------------------------------------------------------------------------

inline double free_energy_bound(const std::vector<double>& lw, std::size_t L) {
  return elbo(lw) / static_cast<double>(L * L);
}

struct Histogram {
  std::vector<double> edges;  // bins+1 edges
  std::vector<double> mass;   // normalized to sum 1
};

inline Histogram histogram(const std::vector<double>& values, std::size_t bins, double lo,
                           double hi) {
  if (values.empty()) throw DomainError("histogram: empty input");
  if (!(hi > lo) || bins == 0) throw DomainError("histogram: bad range");
  Histogram h;
  double w = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(lo + b * w);
  h.mass.assign(bins, 0.0);
  for (double v : values) {
    std::size_t b;
    if (v <= lo)
      b = 0;
    else if (v >= hi)
      b = bins - 1;
    else
      b = static_cast<std::size_t>((v - lo) / w);
    h.mass[std::min(b, bins - 1)] += 1.0;
  }
  for (double& m : h.mass) m /= static_cast<double>(values.size());
  return h;
}

}  // namespace dsam
