#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dsam/rng.hpp"
#include "dsam/tape.hpp"
#include "dsam/targets.hpp"

namespace dsam {

inline double inv_softplus(double y) {
  if (y <= 0) throw DomainError("inv_softplus: argument must be positive");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

/// Trainable diagonal-Gaussian mixture with uniform weights. K = 1 is the
/// plain Gaussian case. Scales are parameterized through softplus so they
/// stay positive under unconstrained optimization.
class MixturePrior {
 public:
  MixturePrior(std::size_t d, std::size_t K, Rng& init_rng, double mean_scale = 1.0,
               double init_std = 1.0)
      : d_(d) {
    if (K == 0) throw ConfigError("MixturePrior: need at least one component");
    Tensor mu(Shape{K, d});
    for (std::size_t i = 0; i < K * d; ++i) mu[i] = mean_scale * init_rng.normal();
    means_ = Parameter(std::move(mu), "prior.means");
    raw_scales_ = Parameter(Tensor(Shape{K, d}, inv_softplus(init_std)), "prior.raw_scales");
  }

  std::size_t dim() const { return d_; }
  std::size_t n_components() const { return means_.value.dim(0); }
  std::vector<Parameter*> parameters() { return {&means_, &raw_scales_}; }
  Parameter& means() { return means_; }
  Parameter& raw_scales() { return raw_scales_; }
  const Tensor& component_means() const { return means_.value; }
  Tensor component_stds() const {
    Tensor s(raw_scales_.value.shape());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = softplus_val(raw_scales_.value[i]);
    return s;
  }

  /// log p0(x) for a batch [m, d] -> [m].
  Var log_density(Tape& t, Var x) const {
    return logsumexp(component_logdens(t, x), 0) - std::log(static_cast<double>(n_components()));
  }

  /// Analytic score d/dx log p0(x), [m, d] -> [m, d], written as a
  /// first-order graph (responsibility-weighted component scores) so that
  /// training gradients through drift terms need only one reverse pass.
  Var score(Tape& t, Var x) const {
    std::size_t m = x.val().dim(0), K = n_components();
    Var stack = component_logdens(t, x);  // [K, m]
    Var ld = logsumexp(stack, 0);         // [m]
    Var mu = t.watch(means_mut());
    Var sd = softplus(t.watch(raw_mut()));
    Var acc = t.constant(Tensor(Shape{m, d_}, 0.0));
    for (std::size_t k = 0; k < K; ++k) {
      Var r = reshape(exp(slice(stack, 0, k, 1) - reshape(ld, Shape{1, m})), Shape{m, 1});
      Var mu_k = slice(mu, 0, k, 1);  // [1, d]
      Var sd_k = slice(sd, 0, k, 1);
      acc = acc + r * ((mu_k - x) / square(sd_k));
    }
    return acc;
  }

  struct Draw {
    Var x0;                          // [m, d], attached to the prior parameters
    std::vector<std::size_t> comp;   // component index per sample
  };

  /// Reparameterized sample x0 = mu_k + sigma_k * xi with a uniformly random
  /// component per path; pathwise gradients flow into means and scales.
  Draw sample_reparam(Tape& t, Rng& rng, std::size_t m) const {
    std::size_t K = n_components();
    std::vector<std::size_t> comp(m);
    for (std::size_t i = 0; i < m; ++i) comp[i] = rng.uniform_int(K);
    Var mu = gather_rows(t.watch(means_mut()), comp);
    Var sd = gather_rows(softplus(t.watch(raw_mut())), comp);
    Var xi = t.constant(rng.normal_tensor(Shape{m, d_}));
    return {mu + sd * xi, std::move(comp)};
  }

  /// Plain-number sample for evaluation-time use.
  Tensor sample_values(Rng& rng, std::size_t m) const {
    Tape t;
    return sample_reparam(t, rng, m).x0.val();
  }

  /// Appends a component at `mean` with the default scale; weights stay
  /// uniform over the enlarged set.
  void add_component(const Tensor& mean, double init_std = 1.0) {
    if (mean.size() != d_) throw ShapeError("add_component: mean has wrong dimension");
    std::size_t K = n_components();
    Tensor mu(Shape{K + 1, d_});
    Tensor raw(Shape{K + 1, d_});
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < d_; ++j) {
        mu.at(k, j) = means_.value.at(k, j);
        raw.at(k, j) = raw_scales_.value.at(k, j);
      }
    for (std::size_t j = 0; j < d_; ++j) {
      mu.at(K, j) = mean[j];
      raw.at(K, j) = inv_softplus(init_std);
    }
    means_.value = std::move(mu);
    means_.grad = Tensor(Shape{K + 1, d_}, 0.0);
    raw_scales_.value = std::move(raw);
    raw_scales_.grad = Tensor(Shape{K + 1, d_}, 0.0);
  }

 private:
  // watch() needs mutable Parameter refs; graph building never mutates them.
  Parameter& means_mut() const { return const_cast<Parameter&>(means_); }
  Parameter& raw_mut() const { return const_cast<Parameter&>(raw_scales_); }

  /// Per-component log densities as a [K, m] stack.
  Var component_logdens(Tape& t, Var x) const {
    if (x.val().ndim() != 2 || x.val().dim(1) != d_)
      throw ShapeError("prior: expected batch of dim " + std::to_string(d_) + ", got " +
                       shape_str(x.val().shape()));
    std::size_t m = x.val().dim(0), K = n_components();
    Var mu = t.watch(means_mut());
    Var sd = softplus(t.watch(raw_mut()));
    std::vector<Var> rows;
    for (std::size_t k = 0; k < K; ++k) {
      Var mu_k = slice(mu, 0, k, 1);
      Var sd_k = slice(sd, 0, k, 1);
      Var z = (x - mu_k) / sd_k;                        // [m, d]
      Var lp = sum(square(z), 1) * (-0.5) - sum(log(sd_k)) +
               (-0.5 * static_cast<double>(d_) * kLog2Pi);
      rows.push_back(reshape(lp, Shape{1, m}));
    }
    return concat(rows, 0);
  }

  std::size_t d_;
  Parameter means_;
  Parameter raw_scales_;
};

}  // namespace dsam
