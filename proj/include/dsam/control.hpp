#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dsam/rng.hpp"
#include "dsam/tape.hpp"

namespace dsam {

/// Sinusoidal embedding of a discrete time index: for j = 0..E/2-1 the pair
/// (sin(2^j pi n/N), cos(2^j pi n/N)).
inline Tensor time_embedding(std::size_t n, std::size_t N, std::size_t E = 32) {
  if (E % 2 != 0) throw ConfigError("time_embedding: E must be even");
  Tensor out(Shape{1, E});
  double frac = N == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(N);
  double freq = M_PI;
  for (std::size_t j = 0; j < E / 2; ++j) {
    out[2 * j] = std::sin(freq * frac);
    out[2 * j + 1] = std::cos(freq * frac);
    freq *= 2.0;
  }
  return out;
}

/// Time-conditioned control network: [x, embed(n)] -> 128 -> 128 -> d with
/// tanh activations. The output layer starts at zero so an untrained control
/// leaves the base dynamics untouched.
class ControlNet {
 public:
  ControlNet(std::size_t d, Rng& init_rng, std::string name = "control",
             std::size_t hidden = 128, std::size_t embed_dim = 32)
      : d_(d), embed_dim_(embed_dim) {
    auto init = [&](std::size_t in, std::size_t out, bool zero) {
      Tensor w(Shape{in, out});
      if (!zero) {
        double s = 1.0 / std::sqrt(static_cast<double>(in));
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = s * init_rng.normal();
      }
      return w;
    };
    w1_ = Parameter(init(d + embed_dim, hidden, false), name + ".w1");
    b1_ = Parameter(Tensor(Shape{hidden}, 0.0), name + ".b1");
    w2_ = Parameter(init(hidden, hidden, false), name + ".w2");
    b2_ = Parameter(Tensor(Shape{hidden}, 0.0), name + ".b2");
    w3_ = Parameter(init(hidden, d, true), name + ".w3");
    b3_ = Parameter(Tensor(Shape{d}, 0.0), name + ".b3");
  }

  std::size_t dim() const { return d_; }
  std::vector<Parameter*> parameters() { return {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_}; }

  /// Control value for a batch [m, d] at time index n of N.
  Var eval(Tape& t, Var x, std::size_t n, std::size_t N) const {
    if (x.val().ndim() != 2 || x.val().dim(1) != d_)
      throw ShapeError("control: expected batch of dim " + std::to_string(d_) + ", got " +
                       shape_str(x.val().shape()));
    std::size_t m = x.val().dim(0);
    Var emb = broadcast_to(t.constant(time_embedding(n, N, embed_dim_)),
                           Shape{m, embed_dim_});
    Var h = concat({x, emb}, 1);
    h = tanh(matmul(h, t.watch(mut(w1_))) + t.watch(mut(b1_)));
    h = tanh(matmul(h, t.watch(mut(w2_))) + t.watch(mut(b2_)));
    return matmul(h, t.watch(mut(w3_))) + t.watch(mut(b3_));
  }

 private:
  static Parameter& mut(const Parameter& p) { return const_cast<Parameter&>(p); }

  std::size_t d_, embed_dim_;
  Parameter w1_, b1_, w2_, b2_, w3_, b3_;
};

/// Learnable per-step scalar gate, zero-initialized; used to mix an analytic
/// score term into a control ("score head").
class StepGate {
 public:
  StepGate(std::size_t N, std::string name = "control.gate")
      : coef_(Tensor(Shape{N + 1}, 0.0), std::move(name)) {}

  std::vector<Parameter*> parameters() { return {&coef_}; }

  Var at(Tape& t, std::size_t n) const {
    Var c = t.watch(const_cast<Parameter&>(coef_));
    return reshape(slice(c, 0, n, 1), Shape{});
  }

 private:
  Parameter coef_;
};

}  // namespace dsam
