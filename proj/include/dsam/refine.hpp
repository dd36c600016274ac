#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "dsam/dynamics.hpp"
#include "dsam/rng.hpp"
#include "dsam/targets.hpp"

namespace dsam {

struct RefinementSchedule {
  std::size_t interval = 500;   // training steps between additions
  std::size_t k_max = 10;       // component budget
  double new_std = 1.0;         // scale of a freshly added component
  std::size_t n_chains = 256;   // candidate chains
  std::size_t n_steps = 64;     // updates per chain
  double chain_init_std = 1.0;  // chain start spread
  double sigma_tilde = 1.0;     // Langevin scale
  double mala_dt = 1e-2;        // Langevin step
  std::size_t rollouts = 4;     // backward rollouts per candidate
  bool forward_heuristic = false;  // score with forward rollouts instead
};

struct CandidateSet {
  Tensor points;                // [C, d]
  std::vector<double> scores;   // filled by score_candidates
  double acceptance_rate = 0;   // of the generating chains
};

/// Langevin proposal log density q(x' | x) for the MALA chain.
inline double mala_proposal_logpdf(const std::vector<double>& from_grad,
                                   const double* from, const double* to, std::size_t d,
                                   double sigma_tilde, double dt) {
  double s2 = sigma_tilde * sigma_tilde;
  double var = 2.0 * s2 * dt;
  double lp = 0;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = from[j] + s2 * from_grad[j] * dt;
    double z = to[j] - mean;
    lp += -0.5 * z * z / var - 0.5 * (kLog2Pi + std::log(var));
  }
  return lp;
}

/// Runs Metropolis-adjusted Langevin chains on the target and returns the
/// final states as candidate points.
inline CandidateSet mala_candidates(const Target& tg, const RefinementSchedule& sched,
                                    Rng& rng) {
  std::size_t C = sched.n_chains, d = tg.dim();
  if (C == 0 || sched.n_steps == 0) throw ConfigError("mala: empty chain budget");
  Tensor x(Shape{C, d});
  for (std::size_t i = 0; i < C * d; ++i) x[i] = sched.chain_init_std * rng.normal();

  double s2 = sched.sigma_tilde * sched.sigma_tilde;
  double step_std = sched.sigma_tilde * std::sqrt(2.0 * sched.mala_dt);
  Tensor lp = log_rho_batch(tg, x);
  Tensor gr = grad_log_rho_batch(tg, x);
  std::size_t accepted = 0, proposed = 0;

  Tensor prop(Shape{C, d});
  for (std::size_t s = 0; s < sched.n_steps; ++s) {
    for (std::size_t i = 0; i < C; ++i)
      for (std::size_t j = 0; j < d; ++j)
        prop.at(i, j) = x.at(i, j) + s2 * gr.at(i, j) * sched.mala_dt + step_std * rng.normal();
    Tensor lp_p = log_rho_batch(tg, prop);
    Tensor gr_p = grad_log_rho_batch(tg, prop);
    for (std::size_t i = 0; i < C; ++i) {
      ++proposed;
      std::vector<double> gfrom(d), gto(d);
      for (std::size_t j = 0; j < d; ++j) {
        gfrom[j] = gr.at(i, j);
        gto[j] = gr_p.at(i, j);
      }
      double log_q_fwd = mala_proposal_logpdf(gfrom, &x.at(i, 0), &prop.at(i, 0), d,
                                              sched.sigma_tilde, sched.mala_dt);
      double log_q_bwd = mala_proposal_logpdf(gto, &prop.at(i, 0), &x.at(i, 0), d,
                                              sched.sigma_tilde, sched.mala_dt);
      double log_alpha = lp_p[i] - lp[i] + log_q_bwd - log_q_fwd;
      if (std::log(rng.uniform()) < log_alpha) {
        ++accepted;
        for (std::size_t j = 0; j < d; ++j) {
          x.at(i, j) = prop.at(i, j);
          gr.at(i, j) = gr_p.at(i, j);
        }
        lp[i] = lp_p[i];
      }
    }
  }
  CandidateSet out;
  out.points = std::move(x);
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(proposed);
  return out;
}

/// Forward-rollout alternative: scores each candidate x0 by starting the
/// forward process there and averaging the accumulated weight terms.
inline Tensor forward_refinement_scores(const SamplerModel& M, const Tensor& candidates,
                                        Rng& rng, std::size_t rollouts) {
  std::size_t c = candidates.dim(0), d = candidates.dim(1);
  const double two_s2 = 2.0 * M.cfg.sigma * M.cfg.sigma;
  Tensor acc(Shape{c}, 0.0);
  for (std::size_t r = 0; r < rollouts; ++r) {
    Tape t;
    Var x = t.constant(candidates);
    Var score = -M.prior.log_density(t, x);
    for (std::size_t n = 0; n < M.cfg.N; ++n) {
      Var dt = M.schedule.dt(t, n);
      Var var_scalar = dt * two_s2;
      Var mean_f = M.forward_mean(t, x, n, dt);
      Var eps = t.constant(rng.normal_tensor(Shape{c, d}));
      Var x_next = t.constant((mean_f + sqrt(var_scalar) * eps).val());
      score = score + diag_gauss_logpdf(x, M.backward_mean(t, x_next, n, dt), var_scalar) -
              diag_gauss_logpdf(x_next, mean_f, var_scalar);
      x = x_next;
    }
    score = score + M.target->log_rho(t, x);
    for (std::size_t i = 0; i < c; ++i) acc[i] += score.val()[i];
  }
  for (std::size_t i = 0; i < c; ++i) acc[i] /= static_cast<double>(rollouts);
  return acc;
}

/// Fills in per-candidate scores (backward rollouts by default); non-finite
/// scores are set to -inf so they can never win the argmax.
inline void score_candidates(const SamplerModel& M, CandidateSet& cands, Rng& rng,
                             const RefinementSchedule& sched) {
  Tensor s = sched.forward_heuristic
                 ? forward_refinement_scores(M, cands.points, rng, sched.rollouts)
                 : backward_refinement_scores(M, cands.points, rng, sched.rollouts);
  cands.scores.assign(s.size(), 0.0);
  for (std::size_t i = 0; i < s.size(); ++i)
    cands.scores[i] =
        std::isfinite(s[i]) ? s[i] : -std::numeric_limits<double>::infinity();
}

/// Adds one component at the best-scoring candidate. Returns false when the
/// component budget is exhausted or no candidate has a finite score.
inline bool refine(SamplerModel& M, const RefinementSchedule& sched, CandidateSet& cands) {
  if (cands.points.dim(0) == 0) throw ConfigError("refine: empty candidate set");
  if (cands.scores.size() != cands.points.dim(0))
    throw ConfigError("refine: candidates not scored");
  if (M.prior.n_components() >= sched.k_max) return false;
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cands.scores.size(); ++i)
    if (cands.scores[i] > best_score) {
      best_score = cands.scores[i];
      best = i;
    }
  if (!std::isfinite(best_score)) return false;
  std::size_t d = cands.points.dim(1);
  Tensor mean(Shape{d});
  for (std::size_t j = 0; j < d; ++j) mean[j] = cands.points.at(best, j);
  M.prior.add_component(mean, sched.new_std);
  return true;
}

/// One full refinement pass: generate candidates, score, add.
inline bool refine_once(SamplerModel& M, const RefinementSchedule& sched, Rng& rng) {
  if (M.prior.n_components() >= sched.k_max) return false;
  CandidateSet cands = mala_candidates(*M.target, sched, rng);
  score_candidates(M, cands, rng, sched);
  return refine(M, sched, cands);
}

}  // namespace dsam
