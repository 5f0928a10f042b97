#include <cmath>

#include "catch_amalgamated.hpp"
#include "ctrsq/meta.hpp"
#include "ctrsq/portfolio.hpp"

using namespace ctrsq;
using namespace ctrsq::portfolio;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("market constants and optimal parameters are frozen") {
  const MarketParams m;
  const auto mc = market_constants(m);
  CHECK_THAT(mc.Px, WithinAbs(0.19098360655737706, 1e-15));
  CHECK_THAT(mc.Pxx, WithinAbs(0.002950819672131148, 1e-15));
  CHECK_THAT(mc.Pnl, WithinAbs(0.2049180327868853, 1e-15));
  const auto star = optimal_params(m);
  CHECK_THAT(star.psi.psi_a0, WithinAbs(0.5901639344262295, 1e-15));
  CHECK_THAT(star.psi.psi_a1, WithinAbs(-4.0983606557377055, 1e-14));
  CHECK_THAT(star.psi.psi_sv, WithinAbs(0.0244, 1e-15));
  CHECK_THAT(star.psi.psi_c1e, WithinAbs(-0.21885245901639355, 1e-14));
  CHECK_THAT(star.psi.psi_c2e, WithinAbs(-0.02196721311475419, 1e-14));
}

TEST_CASE("equal drifts remove the nonlinear term") {
  MarketParams m;
  m.r2 = m.r1;
  CHECK(market_constants(m).Pnl == 0.0);
  // With Pnl = 0 the value is exactly the terminal utility propagated by Px and Pxx.
  const auto c = c_coefficients(0.0, -1.0, 1.0, m);
  CHECK_THAT(c.c0, WithinAbs(-1.5, 1e-15));
}

TEST_CASE("terminal condition") {
  const MarketParams m;
  for (double b0 : {-2.0, 0.0, 0.7})
    for (double b1 : {0.5, 1.0}) {
      const auto c = c_coefficients(m.T, b0, b1, m);
      CHECK(c.c0 == b0 * (1.0 - 0.5 * m.alpha * b0));
      CHECK(c.c1 == (1.0 - m.alpha * b0) * b1);
      CHECK(c.c2 == -0.5 * m.alpha * b1 * b1);
      // J*(T, x, b0, b1) = phi(b0 + b1 x).
      const double x = 1.3;
      const double y = b0 + b1 * x;
      CHECK_THAT(optimal_value(m.T, x, b0, b1, m), WithinAbs(y - 0.5 * m.alpha * y * y, 1e-14));
    }
}

TEST_CASE("the closed form solves its ODEs and the HJB equation") {
  const MarketParams m;
  const auto mc = market_constants(m);
  for (double t : {0.0, 0.3, 0.9})
    for (double b0 : {-1.7, 0.2})
      for (double x : {0.5, 1.0, 2.0}) {
        const auto jet = optimal_value_jet(t, x, b0, 1.0, m);
        CHECK(std::abs(hjb_residual_closed_form(jet, x, mc)) < 1e-12);
        const double h = 1e-5;
        const auto up = c_coefficients(t + h, b0, 1.0, m);
        const auto dn = c_coefficients(t - h, b0, 1.0, m);
        const auto cd = c_coefficients_dt(t, b0, 1.0, mc, m.alpha, m.T);
        CHECK_THAT((up.c1 - dn.c1) / (2.0 * h), WithinAbs(cd.c1, 1e-8));
        CHECK_THAT((up.c0 - dn.c0) / (2.0 * h), WithinAbs(cd.c0, 1e-8));
      }
}

TEST_CASE("families at the oracle parameters reproduce J* and q*") {
  const MarketParams m;
  const auto star = optimal_params(m);
  const auto jfam = theta_value_family(m.alpha, m.T);
  const auto qfam = psi_q_family(m.alpha, m.T);
  const auto theta = star.theta.vec();
  const auto psi = star.psi.vec();
  for (double t : {0.0, 0.5})
    for (double x : {0.6, 1.4}) {
      const std::vector<double> xs{x};
      const AugmentedPoint p{t, xs, -1.2, 0.9};
      CHECK_THAT(jfam->value(theta, p), WithinAbs(optimal_value(t, x, -1.2, 0.9, m), 1e-14));
      for (double a : {-1.0, 0.3, 2.0})
        CHECK_THAT(qfam->value(psi, p, a), WithinAbs(optimal_q(t, x, -1.2, 0.9, a, m), 1e-13));
      const auto quad = qfam->quadratic(psi, p);
      REQUIRE(quad);
      CHECK_THAT(quad->argmax, WithinAbs(optimal_control(t, x, -1.2, 0.9, m), 1e-13));
    }
}

TEST_CASE("family gradients match finite differences") {
  const MarketParams m;
  const auto star = optimal_params(m);
  const auto jfam = theta_value_family(m.alpha, m.T);
  const auto qfam = psi_q_family(m.alpha, m.T);
  const std::vector<double> xs{1.1};
  const AugmentedPoint p{0.25, xs, -1.5, 1.0};
  auto theta = star.theta.vec();
  std::vector<double> g(3);
  jfam->gradient(theta, p, g);
  for (std::size_t i = 0; i < 3; ++i) {
    const double h = 1e-6;
    auto up = theta;
    auto dn = theta;
    up[i] += h;
    dn[i] -= h;
    CHECK_THAT((jfam->value(up, p) - jfam->value(dn, p)) / (2.0 * h), WithinAbs(g[i], 1e-7));
  }
  auto psi = star.psi.vec();
  std::vector<double> gq(5);
  qfam->gradient(psi, p, 0.9, gq);
  for (std::size_t i = 0; i < 5; ++i) {
    const double h = 1e-6;
    auto up = psi;
    auto dn = psi;
    up[i] += h;
    dn[i] -= h;
    CHECK_THAT((qfam->value(up, p, 0.9) - qfam->value(dn, p, 0.9)) / (2.0 * h), WithinAbs(gq[i], 1e-7));
  }
}

TEST_CASE("optimal budget from the oracle value equals the expected terminal wealth") {
  const MarketParams m;
  const auto j = bind_value(theta_value_family(m.alpha, m.T), optimal_params(m).theta.vec());
  const std::vector<double> x{m.x0};
  const double b = optimal_budget(j, 0.0, x);
  CHECK_THAT(b, WithinAbs(1.7132380827205471, 1e-8));
  const auto res = evaluate_policy(lift_policy(OptimalControlPolicy{m}, b, mv_environment(m).reward, 0.0), m,
                                   TimeGrid(0.0, m.T, 100), 4000, RandomStream(11));
  CHECK_THAT(m.x0 + res.mean_return, WithinAbs(b, 0.02));
}

TEST_CASE("evaluation is independent of the thread count") {
  const MarketParams m;
  const TimeGrid g(0.0, m.T, 50);
  const ConstantPolicy pol{{0.5}};
  const auto one = evaluate_policy(pol, m, g, 300, RandomStream(4), 1);
  const auto three = evaluate_policy(pol, m, g, 300, RandomStream(4), 3);
  CHECK(one.mean_return == three.mean_return);
  CHECK(one.curve_mv == three.curve_mv);
}

TEST_CASE("the mean-variance objective uses the population variance") {
  const MarketParams m;
  const auto res = evaluate_policy(ConstantPolicy{{0.5}}, m, TimeGrid(0.0, m.T, 20), 200, RandomStream(9));
  const double n = 200.0;
  const double pop_var = res.std_return * res.std_return * (n - 1.0) / n;
  CHECK_THAT(res.mv_objective, WithinAbs(m.x0 + res.mean_return - 0.5 * m.alpha * pop_var, 1e-12));
  CHECK(res.curve_mv.front() == m.x0);
  CHECK_THROWS_AS(evaluate_policy(ConstantPolicy{{0.5}}, m, TimeGrid(0.0, 1.0, 5), 1, RandomStream(1)),
                  InvalidArgument);
}

TEST_CASE("constant allocation matches the log-normal moments") {
  const MarketParams m;
  const double a = 0.5;
  const double mu = a * m.r1 + (1.0 - a) * m.r2;
  const auto res = evaluate_policy(ConstantPolicy{{a}}, m, TimeGrid(0.0, m.T, 200), 20000, RandomStream(2));
  CHECK_THAT(m.x0 + res.mean_return, WithinRel(std::exp(mu), 0.003));
}

TEST_CASE("sweep and update rows") {
  const MarketParams m;
  const TimeGrid g(0.0, m.T, 20);
  const auto star = optimal_params(m);
  const auto rows = episode_updates(m, g, star.theta.vec(), star.psi.vec(), 10, RandomStream(1), {});
  REQUIRE(rows.size() == 10);
  const std::vector<double> offsets{-0.01, 0.0, 0.01};
  const auto pts = stability_sweep("theta_Px", offsets, m, g, 10, RandomStream(1));
  REQUIRE(pts.size() == 3);
  CHECK(pts[1].mean == [&] {
    double s = 0.0;
    for (const auto& r : rows) s += r[0];
    return s / 10.0;
  }());
  CHECK(pts[2].value == star.theta.theta_Px + 0.01);
  CHECK_THROWS_AS(stability_sweep("nope", offsets, m, g, 10, RandomStream(1)), InvalidArgument);
}

TEST_CASE("market validation") {
  MarketParams m;
  m.sigma1 = 0.0;
  m.sigma2 = 0.0;
  CHECK_THROWS_AS(m.validate(), InvalidArgument);
  MarketParams n;
  n.alpha = -1.0;
  CHECK_THROWS_AS(wealth_sde(n), InvalidArgument);
  CHECK_THROWS_AS(optimal_control(0.0, 0.0, 0.0, 1.0, MarketParams{}), NumericDomainError);
}
