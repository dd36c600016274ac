#include <doctest.h>

#include <cmath>

#include "dsam/num.hpp"
#include "dsam/prior.hpp"
#include "oracles.hpp"

using namespace dsam;

namespace {

// Brute-force mixture log density in plain doubles.
double brute_log_density(const Tensor& means, const Tensor& stds, const double* x,
                         std::size_t d) {
  std::size_t K = means.dim(0);
  std::vector<double> lp(K);
  for (std::size_t k = 0; k < K; ++k) {
    double acc = -0.5 * static_cast<double>(d) * kLog2Pi - std::log(static_cast<double>(K));
    for (std::size_t j = 0; j < d; ++j) {
      double z = (x[j] - means.at(k, j)) / stds.at(k, j);
      acc += -0.5 * z * z - std::log(stds.at(k, j));
    }
    lp[k] = acc;
  }
  return logsumexp(lp);
}

}  // namespace

TEST_CASE("single-component prior matches the diagonal gaussian closed form") {
  Rng rng(21);
  MixturePrior prior(4, 1, rng, 0.8);
  Tensor mu = prior.component_means();
  Tensor sd = prior.component_stds();

  for (int p = 0; p < 20; ++p) {
    Tensor x(Shape{1, 4});
    for (std::size_t j = 0; j < 4; ++j) x[j] = 2.0 * rng.normal();
    double expect = -2.0 * kLog2Pi;
    for (std::size_t j = 0; j < 4; ++j) {
      double z = (x[j] - mu.at(0, j)) / sd.at(0, j);
      expect += -0.5 * z * z - std::log(sd.at(0, j));
    }
    Tape t;
    CHECK(prior.log_density(t, t.constant(x)).val()[0] ==
          doctest::Approx(expect).epsilon(1e-12));
    // analytic score: (mu - x) / sd^2
    Tensor sc = prior.score(t, t.constant(x)).val();
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(sc.at(0, j) ==
            doctest::Approx((mu.at(0, j) - x[j]) / (sd.at(0, j) * sd.at(0, j)))
                .epsilon(1e-12));
  }
}

TEST_CASE("mixture log density matches brute-force summation") {
  Rng rng(22);
  MixturePrior prior(3, 5, rng, 2.0, 0.7);
  Tensor mu = prior.component_means();
  Tensor sd = prior.component_stds();
  for (int p = 0; p < 50; ++p) {
    Tensor x(Shape{1, 3});
    for (std::size_t j = 0; j < 3; ++j) x[j] = 4.0 * rng.normal();
    Tape t;
    double got = prior.log_density(t, t.constant(x)).val()[0];
    double expect = brute_log_density(mu, sd, &x[0], 3);
    CHECK(std::abs(got - expect) < 1e-10 * std::max(1.0, std::abs(expect)));
  }
}

TEST_CASE("analytic score equals the autodiff gradient of log density") {
  Rng rng(23);
  MixturePrior prior(3, 4, rng, 2.0, 0.9);
  for (int p = 0; p < 50; ++p) {
    Tensor x(Shape{2, 3});
    for (std::size_t j = 0; j < 6; ++j) x[j] = 3.0 * rng.normal();
    Tape t;
    Parameter px(x, "x");
    Var xv = t.watch(px);
    t.backward(sum(prior.log_density(t, xv)));
    Tape t2;
    Tensor sc = prior.score(t2, t2.constant(x)).val();
    for (std::size_t j = 0; j < 6; ++j)
      CHECK(std::abs(px.grad[j] - sc[j]) < 1e-8 * std::max(1.0, std::abs(sc[j])));
  }
}

TEST_CASE("reparameterized sampling has the right per-component law") {
  Rng rng(24);
  MixturePrior prior(2, 3, rng, 3.0, 0.8);
  Tensor mu = prior.component_means();
  Tensor sd = prior.component_stds();

  Tape t;
  std::size_t m = 60000;
  auto draw = prior.sample_reparam(t, rng, m);
  const Tensor& x0 = draw.x0.val();
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> c0, c1;
    for (std::size_t i = 0; i < m; ++i)
      if (draw.comp[i] == k) {
        c0.push_back(x0.at(i, 0));
        c1.push_back(x0.at(i, 1));
      }
    REQUIRE(c0.size() > m / 6);  // roughly uniform component counts
    double se0 = sd.at(k, 0) / std::sqrt(static_cast<double>(c0.size()));
    double se1 = sd.at(k, 1) / std::sqrt(static_cast<double>(c1.size()));
    CHECK(std::abs(mean(c0) - mu.at(k, 0)) < 3.5 * se0);
    CHECK(std::abs(mean(c1) - mu.at(k, 1)) < 3.5 * se1);
    CHECK(std::sqrt(variance(c0)) == doctest::Approx(sd.at(k, 0)).epsilon(0.03));
    CHECK(std::sqrt(variance(c1)) == doctest::Approx(sd.at(k, 1)).epsilon(0.03));
  }
}

TEST_CASE("pathwise gradient matches finite differences of the expectation") {
  // E[f(x0)] with f = sum of squares; common random numbers make the Monte
  // Carlo estimate a deterministic function of the parameters, so central
  // differences of the estimate are an independent oracle for the
  // reparameterization gradient.
  Rng init(25);
  MixturePrior prior(2, 2, init, 1.5);
  std::size_t m = 500;
  std::uint64_t seed = 77;

  auto estimate = [&](MixturePrior& pr) {
    Rng rng(seed);
    Tape t;
    auto draw = pr.sample_reparam(t, rng, m);
    return mean(sum(square(draw.x0), 1)).val()[0];
  };

  Rng rng(seed);
  Tape t;
  auto draw = prior.sample_reparam(t, rng, m);
  t.backward(mean(sum(square(draw.x0), 1)));
  Tensor g_mu = prior.means().grad;
  Tensor g_raw = prior.raw_scales().grad;

  double h = 1e-5;
  for (Parameter* p : prior.parameters()) {
    const Tensor& g = (p == &prior.means()) ? g_mu : g_raw;
    for (std::size_t j = 0; j < p->value.size(); ++j) {
      double keep = p->value[j];
      p->value[j] = keep + h;
      double up = estimate(prior);
      p->value[j] = keep - h;
      double dn = estimate(prior);
      p->value[j] = keep;
      double fd = (up - dn) / (2 * h);
      CHECK(std::abs(fd - g[j]) < 1e-5 * std::max(1.0, std::abs(g[j])));
    }
  }
}

TEST_CASE("adding a component keeps uniform weights and default unit scale") {
  Rng rng(26);
  MixturePrior prior(2, 2, rng, 1.0, 0.6);
  Tensor mu_before = prior.component_means();
  Tensor sd_before = prior.component_stds();

  Tensor new_mean(Shape{2}, std::vector<double>{40.0, -40.0});
  prior.add_component(new_mean);
  CHECK(prior.n_components() == 3);
  Tensor sd_after = prior.component_stds();
  CHECK(sd_after.at(2, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sd_after.at(2, 1) == doctest::Approx(1.0).epsilon(1e-9));
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(prior.component_means().at(k, j) == mu_before.at(k, j));
      CHECK(sd_after.at(k, j) == sd_before.at(k, j));
    }

  // brute-force density agreement after the append
  Tensor x(Shape{1, 2}, std::vector<double>{0.3, -0.7});
  Tape t;
  double got = prior.log_density(t, t.constant(x)).val()[0];
  double expect =
      brute_log_density(prior.component_means(), sd_after, &x[0], 2);
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));

  // far from the old components, the mixture looks like the new unit
  // gaussian with weight 1/3
  Tensor far(Shape{1, 2}, std::vector<double>{40.0, -40.0});
  Tape t2;
  double at_new = prior.log_density(t2, t2.constant(far)).val()[0];
  CHECK(at_new == doctest::Approx(-kLog2Pi - std::log(3.0)).epsilon(1e-9));

  CHECK_THROWS_AS(prior.add_component(Tensor(Shape{5}, 0.0)), ShapeError);
}
