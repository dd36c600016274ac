#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "dsam/metrics.hpp"
#include "oracles.hpp"

using namespace dsam;

TEST_CASE("weight summaries: constants, dominance, shift rules, jensen") {
  std::vector<double> eq(16, 1.7);
  CHECK(elbo(eq) == doctest::Approx(1.7).epsilon(1e-14));
  CHECK(log_z_hat(eq) == doctest::Approx(1.7).epsilon(1e-14));
  CHECK(ess(eq) == doctest::Approx(1.0).epsilon(1e-12));

  // one dominant weight -> ess -> 1/m
  std::vector<double> dom(10, -1e8);
  dom[3] = 0.0;
  CHECK(ess(dom) == doctest::Approx(0.1).epsilon(1e-9));

  Rng rng(61);
  std::vector<double> lw(200);
  for (double& v : lw) v = 2.0 * rng.normal();
  CHECK(log_z_hat(lw) >= elbo(lw));
  CHECK(ess(lw) > 0.0);
  CHECK(ess(lw) <= 1.0 + 1e-12);
  // exact shift invariance / equivariance
  std::vector<double> shifted(lw);
  for (double& v : shifted) v += 3.25;
  CHECK(ess(shifted) == doctest::Approx(ess(lw)).epsilon(1e-12));
  CHECK(log_z_hat(shifted) == doctest::Approx(log_z_hat(lw) + 3.25).epsilon(1e-12));

  CHECK_THROWS_AS(elbo(std::vector<double>{}), DomainError);
}

TEST_CASE("sinkhorn: identical clouds, permutation and symmetry, two points") {
  Rng rng(62);
  Tensor A(Shape{40, 2});
  for (std::size_t i = 0; i < 80; ++i) A[i] = rng.normal();

  // identical sets: cost far below the typical pairwise scale
  auto self = sinkhorn(A, A, -1.0, 5000);
  double scale = median_pairwise_sq_dist(A, A);
  CHECK(self.converged);
  CHECK(self.cost < 0.05 * scale);
  // the default iteration budget may stop early but still returns a value
  auto budget = sinkhorn(A, A);
  CHECK(std::isfinite(budget.cost));

  // permutation invariance
  Tensor B(Shape{40, 2});
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t k = 0; k < 2; ++k) B.at(i, k) = A.at(39 - i, k) + 0.5;
  Tensor Bp(Shape{40, 2});
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t k = 0; k < 2; ++k) Bp.at(i, k) = B.at((i + 7) % 40, k);
  auto ab = sinkhorn(A, B);
  auto abp = sinkhorn(A, Bp);
  CHECK(ab.cost == doctest::Approx(abp.cost).epsilon(1e-9));
  auto ba = sinkhorn(B, A);
  CHECK(ab.cost == doctest::Approx(ba.cost).epsilon(1e-4));

  // two point-masses at distance delta: cost -> delta^2 for small epsilon
  Tensor p(Shape{1, 1}, std::vector<double>{0.0});
  Tensor q(Shape{1, 1}, std::vector<double>{0.7});
  auto pq = sinkhorn(p, q, 1e-4);
  CHECK(pq.cost == doctest::Approx(0.49).epsilon(1e-6));

  CHECK_THROWS_AS(sinkhorn(A, Tensor(Shape{3, 5})), ShapeError);
}

TEST_CASE("mode coverage: endpoints, handworked value, invariances") {
  Tensor centers(Shape{2, 1}, std::vector<double>{-3.0, 3.0});
  Tensor one_side(Shape{8, 1});
  for (std::size_t i = 0; i < 8; ++i) one_side[i] = -3.0 + 0.1 * i;
  CHECK(emc(one_side, centers) == 0.0);

  Tensor uniform(Shape{8, 1});
  for (std::size_t i = 0; i < 8; ++i) uniform[i] = (i % 2 == 0) ? -3.0 : 3.0;
  CHECK(emc(uniform, centers) == doctest::Approx(1.0).epsilon(1e-12));

  // frequencies (3/4, 1/4)
  Tensor skew(Shape{8, 1});
  for (std::size_t i = 0; i < 8; ++i) skew[i] = (i < 6) ? -3.0 : 3.0;
  double expect = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25)) / std::log(2.0);
  CHECK(emc(skew, centers) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(0.8113).epsilon(1e-4));

  // translation invariance and single-center convention
  Tensor centers_t(Shape{2, 1}, std::vector<double>{-1.0, 5.0});
  Tensor skew_t(Shape{8, 1});
  for (std::size_t i = 0; i < 8; ++i) skew_t[i] = skew[i] + 2.0;
  CHECK(emc(skew_t, centers_t) == doctest::Approx(emc(skew, centers)).epsilon(1e-12));
  CHECK(emc(skew, Tensor(Shape{1, 1}, 0.0)) == 0.0);
  CHECK_THROWS_AS(emc(Tensor(Shape{0, 1}), centers), DomainError);
}

TEST_CASE("power iteration matches an SVD oracle") {
  Rng rng(63);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t d = 4;
    std::vector<double> A(d * d);
    Eigen::MatrixXd E(d, d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        A[i * d + j] = rng.normal();
        E(i, j) = A[i * d + j];
      }
    double oracle = E.jacobiSvd().singularValues()(0);
    CHECK(spectral_norm(A, d, rng, 60) == doctest::Approx(oracle).epsilon(1e-6));
  }
}

TEST_CASE("spectral sum is exact for a linear control") {
  Rng rng(64);
  std::size_t d = 3, m = 5;
  Tensor A(Shape{d, d});
  Eigen::MatrixXd E(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      A.at(i, j) = rng.normal();
      E(i, j) = A.at(i, j);
    }
  double a_norm = E.jacobiSvd().singularValues()(0);

  std::vector<Tensor> states;
  std::vector<double> dts = {0.1, 0.07, 0.03};
  for (std::size_t n = 0; n < 3; ++n) {
    Tensor s(Shape{m, d});
    for (std::size_t i = 0; i < m * d; ++i) s[i] = rng.normal();
    states.push_back(s);
  }
  double sigma = 1.4;
  double got = jacobian_spectral_sum(
      states, dts,
      [&](Tape& t, Var x, std::size_t) { return matmul(x, t.constant(A)); }, sigma);
  double expect = sigma * a_norm * (0.1 + 0.07 + 0.03);
  CHECK(std::abs(got - expect) < 1e-3 * expect);
}

TEST_CASE("zero control has zero spectral sum along a rollout") {
  Rng rng(65);
  IsotropicGaussian target(Tensor(Shape{2}, 0.0), 1.0);
  SamplerModel M({Method::DIS, 4, 1.0, false}, target, 1, rng);
  Rng traj(5);
  CHECK(control_spectral_norm(M, traj, 8) == 0.0);
}

TEST_CASE("free energy bound and magnetization histogram") {
  std::vector<double> lw(5, 2.0);
  CHECK(free_energy_bound(lw, 4) == doctest::Approx(2.0 / 16.0).epsilon(1e-14));
  lw[0] = 4.0;
  CHECK(free_energy_bound(lw, 4) > 2.0 / 16.0);

  std::vector<double> vals = {-1.0, -1.0, 1.0, 1.0, 0.1};
  auto h = histogram(vals, 4, -2, 2);
  double total = 0;
  for (double m : h.mass) total += m;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  // symmetric augmentation -> symmetric histogram
  std::vector<double> sym;
  Rng rng(66);
  for (int i = 0; i < 500; ++i) {
    double v = rng.normal();
    sym.push_back(v);
    sym.push_back(-v);
  }
  auto hs = histogram(sym, 10, -5, 5);
  for (std::size_t b = 0; b < 5; ++b)
    CHECK(hs.mass[b] == doctest::Approx(hs.mass[9 - b]).epsilon(1e-12));
  // all identical -> one bin holds everything
  auto hi = histogram(std::vector<double>(7, 0.3), 8, -1, 1);
  double mx = 0;
  for (double m : hi.mass) mx = std::max(mx, m);
  CHECK(mx == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(histogram({}, 4, 0, 1), DomainError);
}
