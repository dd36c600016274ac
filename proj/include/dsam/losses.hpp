#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "dsam/dynamics.hpp"
#include "dsam/metrics.hpp"
#include "dsam/num.hpp"

namespace dsam {

enum class LossKind { KL, LogVariance };

namespace detail {

/// Rows of a length-m vector restricted to the finite paths.
inline Var finite_rows(Tape& t, const SimResult& res) {
  std::size_t m = res.finite.size();
  if (res.n_bad == 0) return res.log_w;
  std::vector<std::size_t> good;
  for (std::size_t i = 0; i < m; ++i)
    if (res.finite[i]) good.push_back(i);
  Var col = reshape(res.log_w, Shape{m, 1});
  return reshape(gather_rows(col, good), Shape{good.size()});
}

}  // namespace detail

/// Negative mean weight: minimizing it maximizes the trajectory-space
/// evidence lower bound. Expects an attached (reparameterized) simulation.
inline Var kl_loss(Tape& t, const SimResult& res) {
  Var lw = detail::finite_rows(t, res);
  if (lw.val().size() == 0) throw DomainError("kl_loss: empty batch");
  return -mean(lw);
}

/// Sample variance of the log weights over a detached simulation; gradients
/// flow only through the density evaluations, and the value is invariant
/// under rescaling the target by a constant.
inline Var logvar_loss(Tape& t, const SimResult& res) {
  Var lw = detail::finite_rows(t, res);
  std::size_t n = lw.val().size();
  if (n < 2) throw DomainError("logvar_loss: need at least two paths");
  Var centered = lw - mean(lw);
  return sum(square(centered)) / static_cast<double>(n - 1);
}

// ---------------------------------------------------------------------------
// Adam with global-norm clipping
// ---------------------------------------------------------------------------

struct AdamState {
  struct Slot {
    Tensor m, v;
  };
  std::unordered_map<Parameter*, Slot> slots;
  std::size_t step = 0;
  std::size_t skipped = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// One update over (parameter, learning-rate) pairs using the grads already
/// stored in the parameters. Returns false (and counts the incident) when any
/// gradient entry is non-finite: the step is skipped and moments stay clean.
inline bool adam_step(const std::vector<std::pair<Parameter*, double>>& params,
                      AdamState& st, double clip = 1.0) {
  double sq = 0;
  for (auto& [p, lr] : params) {
    for (std::size_t i = 0; i < p->grad.size(); ++i) {
      double g = p->grad[i];
      if (!std::isfinite(g)) {
        ++st.skipped;
        return false;
      }
      sq += g * g;
    }
  }
  double norm = std::sqrt(sq);
  double scale = (clip > 0 && norm > clip) ? clip / norm : 1.0;
  ++st.step;
  double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (auto& [p, lr] : params) {
    auto& slot = st.slots[p];
    if (slot.m.size() != p->value.size()) {
      // parameter grew (e.g. a new mixture component): keep the moments of
      // the surviving flat prefix, zero the rest
      Tensor m2(p->value.shape(), 0.0), v2(p->value.shape(), 0.0);
      for (std::size_t i = 0; i < std::min(slot.m.size(), m2.size()); ++i) {
        m2[i] = slot.m[i];
        v2[i] = slot.v[i];
      }
      slot.m = std::move(m2);
      slot.v = std::move(v2);
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double g = p->grad[i] * scale;
      slot.m[i] = st.beta1 * slot.m[i] + (1 - st.beta1) * g;
      slot.v[i] = st.beta2 * slot.v[i] + (1 - st.beta2) * g * g;
      double mhat = slot.m[i] / bc1;
      double vhat = slot.v[i] / bc2;
      p->value[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
  return true;
}

/// Constant plateau for the first 40% of training, cosine decay to zero after.
inline double cosine_lr(double base, std::size_t step, std::size_t total_steps) {
  double frac = total_steps == 0 ? 1.0
                                 : static_cast<double>(step) / static_cast<double>(total_steps);
  if (frac <= 0.4) return base;
  double p = std::min(1.0, (frac - 0.4) / 0.6);
  return base * 0.5 * (1.0 + std::cos(M_PI * p));
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t batch = 2000;
  std::size_t steps = 1000;
  double lr = 8e-3;
  double prior_lr = 1e-2;
  double clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t eval_interval = 2000;
  std::size_t eval_batch = 2000;
  std::size_t running_window = 5;
};

struct EvalRecord {
  std::size_t step = 0;
  double loss = 0;
  double elbo = 0;
  double log_z = 0;  // importance-weighted estimate
  double ess_v = 0;
  double running_elbo = 0;
};

struct TrainHooks {
  std::size_t refine_interval = 0;                       // 0 disables
  std::function<void(std::size_t step)> refine;          // may add components
  std::function<void(const EvalRecord&)> on_eval;
};

struct TrainResult {
  std::vector<EvalRecord> history;
  double best_running_elbo = -std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
  std::size_t skipped_steps = 0;
};

/// Simulate -> loss -> backward -> Adam, with periodic evaluation; selects
/// the state whose running-averaged evaluation elbo is best and restores it
/// into the model before returning.
inline TrainResult train(SamplerModel& M, const TrainConfig& tc, LossKind kind,
                         const TrainHooks& hooks = {}) {
  if (tc.steps == 0) throw ConfigError("train: needs at least one step");
  RngPool pool(tc.seed);
  Rng sim_rng = pool.stream("train-sim", 0);
  TrainResult out;
  AdamState adam;
  std::vector<Tensor> best_snapshot;
  double last_loss = std::numeric_limits<double>::quiet_NaN();

  auto snapshot = [&]() {
    std::vector<Tensor> s;
    for (Parameter* p : M.parameters()) s.push_back(p->value);
    return s;
  };

  auto evaluate = [&](std::size_t step) {
    Rng eval_rng = pool.stream("eval", step + 1);
    Tape t;
    auto res = simulate_forward(t, M, eval_rng, tc.eval_batch, false);
    std::vector<double> lw;
    for (std::size_t i = 0; i < tc.eval_batch; ++i)
      if (res.finite[i]) lw.push_back(res.log_w.val()[i]);
    EvalRecord rec;
    rec.step = step;
    rec.loss = last_loss;
    rec.elbo = elbo(lw);
    rec.log_z = log_z_hat(lw);
    rec.ess_v = ess(lw);
    double acc = rec.elbo;
    std::size_t cnt = 1;
    for (std::size_t h = out.history.size();
         h-- > 0 && cnt < tc.running_window;) {
      acc += out.history[h].elbo;
      ++cnt;
    }
    rec.running_elbo = acc / static_cast<double>(cnt);
    out.history.push_back(rec);
    if (rec.running_elbo > out.best_running_elbo) {
      out.best_running_elbo = rec.running_elbo;
      out.best_step = step;
      best_snapshot = snapshot();
    }
    if (hooks.on_eval) hooks.on_eval(rec);
  };

  for (std::size_t step = 1; step <= tc.steps; ++step) {
    if (hooks.refine_interval && hooks.refine && step % hooks.refine_interval == 0) {
      std::size_t k_before = M.prior.n_components();
      hooks.refine(step);
      if (M.prior.n_components() != k_before) {
        // the mixture grew: running-elbo comparisons against the smaller
        // model are meaningless, so restart best-state selection here
        best_snapshot.clear();
        out.best_running_elbo = -std::numeric_limits<double>::infinity();
      }
    }

    Tape t;
    auto res = simulate_forward(t, M, sim_rng, tc.batch, kind == LossKind::KL);
    Var loss = kind == LossKind::KL ? kl_loss(t, res) : logvar_loss(t, res);
    last_loss = loss.val()[0];
    t.backward(loss);

    std::vector<std::pair<Parameter*, double>> plist;
    for (Parameter* p : M.prior_parameters())
      plist.push_back({p, cosine_lr(tc.prior_lr, step, tc.steps)});
    for (Parameter* p : M.other_parameters())
      plist.push_back({p, cosine_lr(tc.lr, step, tc.steps)});
    adam_step(plist, adam, tc.clip);

    if (step % tc.eval_interval == 0 || step == tc.steps) evaluate(step);
  }
  out.skipped_steps = adam.skipped;

  if (!best_snapshot.empty()) {
    auto params = M.parameters();
    if (params.size() == best_snapshot.size()) {
      bool shapes_ok = true;
      for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i]->value.size() != best_snapshot[i].size() &&
            params[i]->name.rfind("prior.", 0) != 0)
          shapes_ok = false;
      if (shapes_ok)
        for (std::size_t i = 0; i < params.size(); ++i) {
          params[i]->value = best_snapshot[i];
          params[i]->grad = Tensor(params[i]->value.shape(), 0.0);
        }
    }
  }
  return out;
}

}  // namespace dsam
