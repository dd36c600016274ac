#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dsam/rng.hpp"
#include "dsam/tape.hpp"

namespace dsam {

inline constexpr double kLog2Pi = 1.8378770664093453;

/// Unnormalized target density rho with analytic log-density and score.
/// Both are expressed as tape graphs over a batch x of shape [m, d], so
/// gradients flow through them wherever they appear inside a simulation.
class Target {
 public:
  virtual ~Target() = default;
  virtual std::size_t dim() const = 0;
  virtual std::string name() const = 0;

  /// log rho for a batch [m, d] -> [m].
  virtual Var log_rho(Tape& t, Var x) const = 0;
  /// Analytic score (d/dx log rho), [m, d] -> [m, d].
  virtual Var grad_log_rho(Tape& t, Var x) const = 0;

  virtual std::optional<double> true_log_z() const { return std::nullopt; }
  virtual std::optional<Tensor> mode_centers() const { return std::nullopt; }
  virtual bool has_exact_sampler() const { return false; }
  virtual Tensor sample(Rng&, std::size_t) const {
    throw std::logic_error("target has no exact sampler");
  }

 protected:
  void check_dim(const Var& x) const {
    if (x.val().ndim() != 2 || x.val().dim(1) != dim())
      throw ShapeError(name() + ": expected batch of dim " + std::to_string(dim()) +
                       ", got " + shape_str(x.val().shape()));
  }
};

/// Plain-number views of a target, used by MCMC kernels and metrics.
inline Tensor log_rho_batch(const Target& tg, const Tensor& X) {
  Tape t;
  return tg.log_rho(t, t.constant(X)).val();
}
inline Tensor grad_log_rho_batch(const Target& tg, const Tensor& X) {
  Tape t;
  return tg.grad_log_rho(t, t.constant(X)).val();
}
inline double log_rho_point(const Target& tg, const Tensor& x) {
  Tensor X(Shape{1, x.size()}, x.vec_data());
  return log_rho_batch(tg, X)[0];
}

// ---------------------------------------------------------------------------
// Closed-form oracle target
// ---------------------------------------------------------------------------

class IsotropicGaussian : public Target {
 public:
  IsotropicGaussian(Tensor mean, double variance)
      : mean_(std::move(mean)), var_(variance) {
    if (var_ <= 0) throw ConfigError("IsotropicGaussian: variance must be positive");
  }

  std::size_t dim() const override { return mean_.size(); }
  std::string name() const override { return "gaussian"; }
  double variance() const { return var_; }
  const Tensor& mean() const { return mean_; }

  Var log_rho(Tape& t, Var x) const override {
    check_dim(x);
    std::size_t d = dim();
    Var mu = t.constant(mean_);
    Var diff = x - mu;
    return sum(square(diff), 1) * (-0.5 / var_) +
           (-0.5 * static_cast<double>(d) * (kLog2Pi + std::log(var_)));
  }

  Var grad_log_rho(Tape& t, Var x) const override {
    check_dim(x);
    return (x - t.constant(mean_)) * (-1.0 / var_);
  }

  std::optional<double> true_log_z() const override { return 0.0; }
  bool has_exact_sampler() const override { return true; }
  Tensor sample(Rng& rng, std::size_t m) const override {
    Tensor out(Shape{m, dim()});
    double s = std::sqrt(var_);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < dim(); ++j) out.at(i, j) = mean_[j] + s * rng.normal();
    return out;
  }

 private:
  Tensor mean_;
  double var_;
};

// ---------------------------------------------------------------------------
// Neal's funnel, d = 10, sigma_f^2 = 9
// ---------------------------------------------------------------------------

class Funnel : public Target {
 public:
  std::size_t dim() const override { return 10; }
  std::string name() const override { return "funnel"; }

  Var log_rho(Tape& t, Var x) const override {
    check_dim(x);
    std::size_t m = x.val().dim(0);
    Var x1 = slice(x, 1, 0, 1);                 // [m,1]
    Var rest = slice(x, 1, 1, 9);               // [m,9]
    Var x1f = reshape(x1, Shape{m});            // [m]
    Var sq = sum(square(rest), 1);              // [m]
    Var head = square(x1f) * (-1.0 / 18.0) + (-0.5 * (kLog2Pi + std::log(9.0)));
    Var tail = x1f * (-4.5) + (-4.5 * kLog2Pi) + exp(-x1f) * sq * (-0.5);
    return head + tail;
  }

  Var grad_log_rho(Tape& t, Var x) const override {
    check_dim(x);
    std::size_t m = x.val().dim(0);
    Var x1 = slice(x, 1, 0, 1);    // [m,1]
    Var rest = slice(x, 1, 1, 9);  // [m,9]
    Var sq = reshape(sum(square(rest), 1), Shape{m, 1});
    Var e = exp(-x1);
    Var g1 = x1 * (-1.0 / 9.0) - 4.5 + e * sq * 0.5;  // [m,1]
    Var grest = rest * (-e);                          // broadcast [m,1] over [m,9]
    return concat({g1, grest}, 1);
  }

  std::optional<double> true_log_z() const override { return 0.0; }
  bool has_exact_sampler() const override { return true; }
  Tensor sample(Rng& rng, std::size_t m) const override {
    Tensor out(Shape{m, 10});
    for (std::size_t i = 0; i < m; ++i) {
      double v = 3.0 * rng.normal();
      out.at(i, 0) = v;
      double s = std::exp(0.5 * v);
      for (std::size_t j = 1; j < 10; ++j) out.at(i, j) = s * rng.normal();
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// 2-d random Gaussian mixture (10 components, Wishart covariances)
// ---------------------------------------------------------------------------

class RandomGmmTarget : public Target {
 public:
  explicit RandomGmmTarget(std::uint64_t seed, std::size_t n_components = 10) {
    Rng rng(RngPool::mix(seed, "gmm-target", 0));
    std::size_t nu = 3;                       // dof = d + 1
    double s = 1.0 / std::sqrt(static_cast<double>(nu));  // component std ~ 1
    for (std::size_t k = 0; k < n_components; ++k) {
      Comp c;
      c.mu[0] = rng.uniform() * 24.0 - 12.0;
      c.mu[1] = rng.uniform() * 24.0 - 12.0;
      Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
      for (std::size_t j = 0; j < nu; ++j) {
        Eigen::Vector2d v(s * rng.normal(), s * rng.normal());
        cov += v * v.transpose();
      }
      Eigen::Matrix2d inv = cov.inverse();
      c.a11 = inv(0, 0);
      c.a12 = inv(0, 1);
      c.a22 = inv(1, 1);
      c.logdet = std::log(cov.determinant());
      Eigen::LLT<Eigen::Matrix2d> llt(cov);
      Eigen::Matrix2d L = llt.matrixL();
      c.l11 = L(0, 0);
      c.l21 = L(1, 0);
      c.l22 = L(1, 1);
      comps_.push_back(c);
    }
  }

  std::size_t dim() const override { return 2; }
  std::string name() const override { return "gmm2d"; }

  Var log_rho(Tape& t, Var x) const override {
    check_dim(x);
    std::size_t m = x.val().dim(0);
    return logsumexp(component_stack(t, x, m), 0);
  }

  Var grad_log_rho(Tape& t, Var x) const override {
    check_dim(x);
    std::size_t m = x.val().dim(0);
    Var stack = component_stack(t, x, m);  // [K,m]
    Var lr = logsumexp(stack, 0);          // [m]
    Var x0 = slice(x, 1, 0, 1), x1 = slice(x, 1, 1, 1);
    Var acc0 = t.constant(Tensor(Shape{m, 1}, 0.0));
    Var acc1 = t.constant(Tensor(Shape{m, 1}, 0.0));
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      const Comp& c = comps_[k];
      Var r = reshape(exp(slice(stack, 0, k, 1) - reshape(lr, Shape{1, m})), Shape{m, 1});
      Var d0 = x0 - c.mu[0], d1 = x1 - c.mu[1];
      acc0 = acc0 + r * (d0 * (-c.a11) + d1 * (-c.a12));
      acc1 = acc1 + r * (d0 * (-c.a12) + d1 * (-c.a22));
    }
    return concat({acc0, acc1}, 1);
  }

  std::optional<double> true_log_z() const override { return 0.0; }
  std::optional<Tensor> mode_centers() const override {
    Tensor c(Shape{comps_.size(), 2});
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      c.at(k, 0) = comps_[k].mu[0];
      c.at(k, 1) = comps_[k].mu[1];
    }
    return c;
  }
  bool has_exact_sampler() const override { return true; }
  Tensor sample(Rng& rng, std::size_t m) const override {
    Tensor out(Shape{m, 2});
    for (std::size_t i = 0; i < m; ++i) {
      const Comp& c = comps_[rng.uniform_int(comps_.size())];
      double z0 = rng.normal(), z1 = rng.normal();
      out.at(i, 0) = c.mu[0] + c.l11 * z0;
      out.at(i, 1) = c.mu[1] + c.l21 * z0 + c.l22 * z1;
    }
    return out;
  }

 private:
  struct Comp {
    double mu[2];
    double a11, a12, a22;  // inverse covariance
    double logdet;
    double l11, l21, l22;  // Cholesky of covariance
  };

  Var component_stack(Tape& t, Var x, std::size_t m) const {
    Var x0 = slice(x, 1, 0, 1), x1 = slice(x, 1, 1, 1);
    std::vector<Var> rows;
    double logw = -std::log(static_cast<double>(comps_.size()));
    for (const Comp& c : comps_) {
      Var d0 = x0 - c.mu[0], d1 = x1 - c.mu[1];
      Var qf = square(d0) * c.a11 + d0 * d1 * (2.0 * c.a12) + square(d1) * c.a22;  // [m,1]
      Var lp = qf * (-0.5) + (logw - kLog2Pi - 0.5 * c.logdet);
      rows.push_back(reshape(lp, Shape{1, m}));
    }
    return concat(rows, 0);  // [K,m]
  }

  std::vector<Comp> comps_;
};

// ---------------------------------------------------------------------------
// Bayesian logistic regression
// ---------------------------------------------------------------------------

struct Dataset {
  Tensor X;  // [n, d], includes intercept column
  Tensor y;  // [n], values in {0,1}
};

/// Loads a CSV with a header row, standardizes feature columns (zero mean,
/// unit variance; constant columns skipped with a warning), and appends an
/// intercept column. Labels must be binary {0,1}.
inline Dataset load_csv_dataset(const std::string& path, const std::string& label_col) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty dataset: " + path);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  auto it = std::find(header.begin(), header.end(), label_col);
  if (it == header.end()) throw ConfigError("label column not found: " + label_col);
  std::size_t label_idx = static_cast<std::size_t>(it - header.begin());

  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (...) {
        throw ConfigError("parse failure at line " + std::to_string(lineno) + ": '" + cell + "'");
      }
    }
    if (row.size() != header.size())
      throw ConfigError("row " + std::to_string(lineno) + " has wrong column count");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("dataset has no data rows: " + path);

  std::size_t n = rows.size(), p = header.size() - 1;
  Tensor X(Shape{n, p + 1});
  Tensor y(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (j == label_idx) {
        double lv = rows[i][j];
        if (lv != 0.0 && lv != 1.0)
          throw ConfigError("non-binary label " + std::to_string(lv) + " at line " +
                            std::to_string(i + 2));
        y[i] = lv;
      } else {
        X.at(i, c++) = rows[i][j];
      }
    }
    X.at(i, p) = 1.0;  // intercept
  }
  // standardize feature columns
  for (std::size_t j = 0; j < p; ++j) {
    double m = 0, s = 0;
    for (std::size_t i = 0; i < n; ++i) m += X.at(i, j);
    m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) s += (X.at(i, j) - m) * (X.at(i, j) - m);
    s = std::sqrt(s / static_cast<double>(n));
    if (s < 1e-12) {
      std::cerr << "warning: constant column '" << header[j >= label_idx ? j + 1 : j]
                << "' left unstandardized\n";
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) X.at(i, j) = (X.at(i, j) - m) / s;
  }
  return {std::move(X), std::move(y)};
}

class BayesLogReg : public Target {
 public:
  explicit BayesLogReg(Dataset data, double prior_variance = 100.0)
      : data_(std::move(data)), prior_var_(prior_variance) {}

  /// Seeded synthetic dataset (n=100, 10 features + intercept => d=11) so the
  /// repo is self-contained without external files.
  static BayesLogReg synthetic(std::uint64_t seed = 0) {
    Rng rng(RngPool::mix(seed, "logreg-data", 0));
    std::size_t n = 100, p = 10;
    Tensor X(Shape{n, p + 1});
    Tensor w(Shape{p + 1});
    for (std::size_t j = 0; j <= p; ++j) w[j] = rng.normal();
    Tensor y(Shape{n});
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0;
      for (std::size_t j = 0; j < p; ++j) {
        X.at(i, j) = rng.normal();
        z += X.at(i, j) * w[j];
      }
      X.at(i, p) = 1.0;
      z += w[p];
      y[i] = rng.uniform() < sigmoid_val(z) ? 1.0 : 0.0;
    }
    return BayesLogReg(Dataset{std::move(X), std::move(y)});
  }

  std::size_t dim() const override { return data_.X.dim(1); }
  std::string name() const override { return "logreg"; }

  Var log_rho(Tape& t, Var w) const override {
    check_dim(w);
    std::size_t n = data_.X.dim(0), d = dim();
    Tensor Xt(Shape{d, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) Xt.at(j, i) = data_.X.at(i, j);
    Var z = matmul(w, t.constant(std::move(Xt)));  // [m,n]
    Var yc = t.constant(data_.y);                  // [n]
    Var loglik = sum(z * yc - softplus(z), 1);     // [m]
    Var logprior = sum(square(w), 1) * (-0.5 / prior_var_) +
                   (-0.5 * static_cast<double>(d) * (kLog2Pi + std::log(prior_var_)));
    return loglik + logprior;
  }

  Var grad_log_rho(Tape& t, Var w) const override {
    check_dim(w);
    std::size_t n = data_.X.dim(0), d = dim();
    Tensor Xt(Shape{d, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) Xt.at(j, i) = data_.X.at(i, j);
    Var z = matmul(w, t.constant(std::move(Xt)));  // [m,n]
    Var resid = t.constant(data_.y) - sigmoid(z);  // [m,n]
    return matmul(resid, t.constant(data_.X)) + w * (-1.0 / prior_var_);
  }

 private:
  Dataset data_;
  double prior_var_;
};

// ---------------------------------------------------------------------------
// phi^4 lattice field theory on an L x L periodic lattice
// ---------------------------------------------------------------------------

namespace detail {

/// Linear neighbor-sum over the lattice. forward_only sums the +x,+t shifts
/// (each undirected bond counted once); otherwise all four neighbors.
inline Var lattice_neighbor_sum(Var phi, std::size_t L, bool forward_only) {
  const Tensor& X = phi.val();
  std::size_t m = X.dim(0), d = L * L;
  auto site = [L](std::size_t r, std::size_t c) { return r * L + c; };
  // neighbor tables
  std::vector<std::vector<std::size_t>> nb(d);
  for (std::size_t r = 0; r < L; ++r)
    for (std::size_t c = 0; c < L; ++c) {
      auto& v = nb[site(r, c)];
      v.push_back(site((r + 1) % L, c));
      v.push_back(site(r, (c + 1) % L));
      if (!forward_only) {
        v.push_back(site((r + L - 1) % L, c));
        v.push_back(site(r, (c + L - 1) % L));
      }
    }
  Tensor out(Shape{m, d}, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t s = 0; s < d; ++s) {
      double acc = 0;
      for (std::size_t q : nb[s]) acc += X.at(i, q);
      out.at(i, s) = acc;
    }
  Tape& t = *phi.tape;
  return t.push(std::move(out), t.requires_grad(phi.id),
                [phi, nb = std::move(nb), m, d](Tape& t, int self) {
                  // transpose: g flows from site s back to each neighbor q
                  const Tensor& g = t.grad(self);
                  Tensor gp(phi.val().shape(), 0.0);
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t s = 0; s < d; ++s)
                      for (std::size_t q : nb[s]) gp.at(i, q) += g.at(i, s);
                  t.accumulate(phi.id, gp);
                });
}

}  // namespace detail

class Phi4Lattice : public Target {
 public:
  Phi4Lattice(std::size_t L, double kappa, double lambda = 0.022)
      : L_(L), kappa_(kappa), lambda_(lambda) {}

  std::size_t dim() const override { return L_ * L_; }
  std::size_t extent() const { return L_; }
  double kappa() const { return kappa_; }
  double lambda() const { return lambda_; }
  std::string name() const override { return "phi4"; }

  /// U(phi) = -2k sum_x sum_{mu in +} phi_x phi_{x+mu} + (1-2l) sum phi^2 + l sum phi^4
  Var potential(Tape& t, Var phi) const {
    check_dim(phi);
    Var hop = sum(phi * detail::lattice_neighbor_sum(phi, L_, /*forward_only=*/true), 1);
    Var sq = square(phi);
    Var mass = sum(sq, 1);
    Var quart = sum(square(sq), 1);
    return hop * (-2.0 * kappa_) + mass * (1.0 - 2.0 * lambda_) + quart * lambda_;
  }

  Var log_rho(Tape& t, Var phi) const override { return -potential(t, phi); }

  Var grad_log_rho(Tape& t, Var phi) const override {
    check_dim(phi);
    Var nb = detail::lattice_neighbor_sum(phi, L_, /*forward_only=*/false);
    Var cube = square(phi) * phi;
    return nb * (2.0 * kappa_) + phi * (-2.0 * (1.0 - 2.0 * lambda_)) + cube * (-4.0 * lambda_);
  }

 private:
  std::size_t L_;
  double kappa_, lambda_;
};

/// Average magnetization M(phi) = sum_x phi_x for a batch of fields [m, L^2].
inline Tensor magnetization(const Tensor& fields) {
  std::size_t m = fields.dim(0), d = fields.dim(1);
  Tensor out(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += fields.at(i, j);
    out[i] = s;
  }
  return out;
}

}  // namespace dsam
