#include <cmath>
#include <numbers>

#include "catch_amalgamated.hpp"
#include "ctrsq/parallel.hpp"
#include "ctrsq/portfolio.hpp"
#include "ctrsq/qlearning.hpp"

using namespace ctrsq;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

/// q(a) = peak - k (a - m)^2 with params (m, k, peak); optionally declares its shape.
ActionValueFamilyPtr bump(bool declare) {
  auto value = [](std::span<const double> p, const AugmentedPoint&, double a) {
    return p[2] - p[1] * (a - p[0]) * (a - p[0]);
  };
  auto grad = [](std::span<const double> p, const AugmentedPoint&, double a, std::span<double> out) {
    out[0] = 2.0 * p[1] * (a - p[0]);
    out[1] = -(a - p[0]) * (a - p[0]);
    out[2] = 1.0;
  };
  LambdaActionValueFamily::QuadFn quad;
  if (declare)
    quad = [](std::span<const double> p, const AugmentedPoint&) {
      return std::optional<QuadraticInAction>(QuadraticInAction{-p[1], p[0], p[2]});
    };
  return std::make_shared<LambdaActionValueFamily>(std::vector<std::string>{"m", "k", "peak"}, value, grad,
                                                   quad);
}

const std::vector<double> x1{1.0};

}  // namespace

TEST_CASE("Gibbs policy of a quadratic q is Gaussian") {
  const GibbsPolicy pol(bump(true), {0.4, 2.0, 0.0}, 0.1);
  const AugmentedPoint p{0.0, x1, 0.0, 1.5};
  const auto g = pol.gaussian(p);
  REQUIRE(g);
  CHECK(g->first == 0.4);
  CHECK_THAT(g->second, WithinAbs(0.1 * 1.5 / 4.0, 1e-15));
  CHECK_THROWS_AS(GibbsPolicy(bump(true), {0.4, -1.0, 0.0}, 0.1).gaussian(p), NotNormalizable);
  CHECK_THROWS_AS(GibbsPolicy(bump(true), {0.4, 1.0, 0.0}, 0.0), InvalidArgument);
}

TEST_CASE("grid sampling matches the Gaussian moments") {
  const GibbsPolicy pol(bump(false), {0.4, 2.0, 0.0}, 0.1, ActionSpace::unbounded(), Interval{-3.0, 3.0});
  const AugmentedPoint p{0.0, x1, 0.0, 1.0};
  CHECK_FALSE(pol.gaussian(p));
  Rng rng = RandomStream(2).engine();
  Moments m;
  for (int i = 0; i < 20000; ++i) m.add(pol.sample(p, rng));
  CHECK(std::abs(m.mean() - 0.4) < 4.0 * m.standard_error());
  CHECK_THAT(m.population_variance(), WithinRel(0.025, 0.05));
  const GibbsPolicy unranged(bump(false), {0.4, 2.0, 0.0}, 0.1);
  CHECK_THROWS_AS(unranged.sample(p, rng), NotNormalizable);
}

TEST_CASE("bounded action spaces truncate the density") {
  const GibbsPolicy pol(bump(true), {0.4, 2.0, 0.0}, 0.1, ActionSpace::interval(0.0, 1.0));
  const AugmentedPoint p{0.0, x1, 0.0, 1.0};
  CHECK_FALSE(pol.gaussian(p));
  Rng rng = RandomStream(3).engine();
  for (int i = 0; i < 2000; ++i) {
    const double a = pol.sample(p, rng);
    REQUIRE(a >= 0.0);
    REQUIRE(a <= 1.0);
  }
}

TEST_CASE("log Z: closed form agrees with the grid") {
  const AugmentedPoint p{0.0, x1, 0.0, 0.8};
  const std::vector<double> params{0.1, 1.7, 0.35};
  const auto closed = normalize_q(bump(true), params, p, 0.2);
  const auto grid = normalize_q(bump(false), params, p, 0.2, ActionSpace::unbounded(), Interval{-4.0, 4.0});
  CHECK_THAT(closed.log_z, WithinAbs(grid.log_z, 1e-6));
  CHECK_THAT(closed.shift, WithinAbs(0.2 * 0.8 * closed.log_z, 1e-15));
  // k = pi and tau b1 = 1 leave only the peak.
  const auto unit = normalize_q(bump(true), std::vector<double>{0.0, std::numbers::pi, 0.3}, {0.0, x1, 0.0, 1.0}, 1.0);
  CHECK_THAT(unit.log_z, WithinAbs(0.3, 1e-15));
}

TEST_CASE("Gibbs expectations") {
  const GibbsPolicy pol(bump(true), {0.4, 2.0, 0.0}, 0.1);
  const AugmentedPoint p{0.0, x1, 0.0, 1.0};
  double out[2];
  gibbs_expectation(pol, p, 2,
                    [](double a, std::span<double> g) {
                      g[0] = a;
                      g[1] = a * a;
                    },
                    out);
  CHECK_THAT(out[0], WithinAbs(0.4, 1e-12));
  CHECK_THAT(out[1], WithinAbs(0.16 + 0.025, 1e-12));
}

TEST_CASE("TD delta and the episode update") {
  CHECK(td_delta(1.5, 1.0, 2.0, 0.1) == 1.5 - 1.0 - 0.2);
  CHECK_THROWS_AS(td_delta(1.0, 1.0, 1.0, 0.0), InvalidArgument);

  // J = theta t and q = 0: delta_k = theta dt, xi_k = t_k.
  const LambdaValueFamily jfam(
      {"slope"}, [](std::span<const double> th, const AugmentedPoint& p) { return th[0] * p.t; },
      [](std::span<const double>, const AugmentedPoint& p, std::span<double> out) { out[0] = p.t; });
  const LambdaActionValueFamily qfam(
      {"c"}, [](std::span<const double>, const AugmentedPoint&, double) { return 0.0; },
      [](std::span<const double>, const AugmentedPoint&, double, std::span<double> out) { out[0] = 0.0; });
  const auto env = portfolio::mv_environment(portfolio::MarketParams{});
  const TimeGrid g(0.0, 1.0, 10);
  const auto traj = simulate_augmented(
      env, [](const AugmentedStepContext&, Rng&, std::span<double> a) { a[0] = 0.5; }, g, x1, 0.0, 1.0,
      RandomStream(1));
  const std::vector<double> theta{2.0};
  const std::vector<double> psi{0.0};
  const auto u = episode_update(traj, jfam, theta, qfam, psi);
  double expected = 0.0;
  for (std::size_t k = 0; k < 10; ++k) expected += g.time(k) * 2.0 * 0.1;
  CHECK_THAT(u.dtheta[0], WithinAbs(expected, 1e-14));
  CHECK(u.dpsi[0] == 0.0);
}

TEST_CASE("learning rate schedule") {
  CHECK(LearningRateSchedule{0.01, 0.0}.at(1000) == 0.01);
  CHECK_THAT((LearningRateSchedule{0.01, 100.0}.at(100)), WithinAbs(0.005, 1e-15));
}

namespace {

TrainingConfig small_config() {
  const portfolio::MarketParams m;
  const auto star = portfolio::optimal_params(m);
  TrainingConfig c;
  c.episodes = 40;
  c.grid = TimeGrid(0.0, 1.0, 50);
  c.theta0 = star.theta.vec();
  c.psi0 = star.psi.vec();
  for (double& v : c.theta0) v *= 1.1;
  for (double& v : c.psi0) v *= 0.9;
  return c;
}

TrainingLog run(const TrainingConfig& c, std::uint64_t seed = 0) {
  const portfolio::MarketParams m;
  return train(portfolio::mv_environment(m), *portfolio::theta_value_family(m.alpha, m.T),
               portfolio::psi_q_family(m.alpha, m.T), c, RandomStream(seed));
}

}  // namespace

TEST_CASE("zero learning rates leave the parameters unchanged") {
  auto c = small_config();
  c.lr_theta.initial = 0.0;
  c.lr_psi.initial = 0.0;
  const auto log = run(c);
  REQUIRE(log.records.size() == 40);
  CHECK(log.final_theta() == c.theta0);
  CHECK(log.final_psi() == c.psi0);
  CHECK(log.records.front().episode == 1);
  CHECK(log.theta_names == std::vector<std::string>{"theta_Px", "theta_Pxx", "theta_Pnl"});
}

TEST_CASE("training is reproducible for a fixed seed") {
  const auto c = small_config();
  CHECK(run(c, 3) == run(c, 3));
  CHECK_FALSE(run(c, 3) == run(c, 4));
}

TEST_CASE("rate scales multiply per component") {
  auto c = small_config();
  c.theta_rate_scale = {1.0, 0.0, 1.0};
  c.psi_rate_scale = {0.0, 0.0, 0.0, 0.0, 0.0};
  const auto log = run(c);
  CHECK(log.final_theta()[1] == c.theta0[1]);
  CHECK(log.final_theta()[0] != c.theta0[0]);
  CHECK(log.final_psi() == c.psi0);
  c.psi_rate_scale = {1.0};
  CHECK_THROWS_AS(run(c), InvalidArgument);
}

TEST_CASE("the divergence guard reports the episode") {
  auto c = small_config();
  c.lr_theta.initial = 50.0;
  c.lr_psi.initial = 50.0;
  c.divergence_bound = 10.0;
  try {
    (void)run(c);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.episode() < 40);
  }
}

TEST_CASE("normalized mode shifts q by tau b1 log Z") {
  const portfolio::MarketParams m;
  const auto star = portfolio::optimal_params(m);
  const auto qfam = portfolio::psi_q_family(m.alpha, m.T);
  const auto jfam = portfolio::theta_value_family(m.alpha, m.T);
  const auto env = portfolio::mv_environment(m);
  const GibbsPolicy pol(qfam, star.psi.vec(), 0.05);
  const TimeGrid g(0.0, 1.0, 20);
  const auto traj = simulate_augmented(env, pol, g, x1, -1.7, 1.0, RandomStream(5));
  const auto theta = star.theta.vec();
  const auto psi = star.psi.vec();
  const auto raw = episode_update(traj, *jfam, theta, *qfam, psi);
  const auto norm = episode_update(traj, *jfam, theta, *qfam, psi, QMode{true, &pol});
  double bias = 0.0;
  std::vector<double> xi(3);
  for (std::size_t k = 0; k < 20; ++k) {
    jfam->gradient(theta, traj.point(k), xi);
    bias += xi[0] * normalize_q(pol, traj.point(k)).shift * g.step(k);
  }
  CHECK_THAT(norm.dtheta[0] - raw.dtheta[0], WithinAbs(bias, 1e-12));
  CHECK_THROWS_AS(episode_update(traj, *jfam, theta, *qfam, psi, QMode{true, nullptr}), InvalidArgument);
}
