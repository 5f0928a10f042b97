#include <cmath>

#include "catch_amalgamated.hpp"
#include "ctrsq/meta.hpp"
#include "ctrsq/portfolio.hpp"

using namespace ctrsq;
using Catch::Matchers::WithinAbs;

namespace {
const std::vector<double> x1{1.0};
}

TEST_CASE("optimal budget of a concave toy value") {
  // g(b) = b - (2 - b)^2 / 2 peaks at b = 3 with g = 2.5.
  const AugmentedValue j = [](const AugmentedPoint& p) { return -0.5 * (p.b0 + 2.0) * (p.b0 + 2.0); };
  CHECK_THAT(optimal_budget(j, 0.0, x1), WithinAbs(3.0, 1e-6));
  CHECK_THAT(optimal_value(j, 0.0, x1, 3.0), WithinAbs(2.5, 1e-15));
}

TEST_CASE("flat budget objective returns zero") {
  const AugmentedValue j = [](const AugmentedPoint& p) { return p.b0; };
  CHECK(optimal_budget(j, 0.0, x1) == 0.0);
}

TEST_CASE("convex budget objective is unbounded") {
  const AugmentedValue j = [](const AugmentedPoint& p) { return p.b0 * p.b0; };
  CHECK_THROWS_AS(optimal_budget(j, 0.0, x1), UnboundedObjective);
}

TEST_CASE("portfolio budget and optimal value") {
  const portfolio::MarketParams m;
  const auto star = portfolio::optimal_params(m);
  const auto j = bind_value(portfolio::theta_value_family(m.alpha, m.T), star.theta.vec());
  const double b = optimal_budget(j, 0.0, x1);
  // Frozen from the closed form: E[X_T] = b* under the optimal policy.
  CHECK_THAT(b, WithinAbs(1.7132380827, 1e-7));
  CHECK_THAT(optimal_value(j, 0.0, x1, b), WithinAbs(1.4574452191, 1e-9));
}

TEST_CASE("lifted policy without running reward sees (-b*, 1)") {
  const RewardSpec reward = RewardSpec::terminal_only([](std::span<const double> x) { return x[0]; });
  std::vector<std::pair<double, double>> seen;
  auto spy = [&seen](const AugmentedStepContext& c, Rng&, std::span<double> a) {
    seen.emplace_back(c.b0, c.b1);
    a[0] = 0.0;
  };
  auto lifted = lift_policy(spy, 0.75, reward, 0.0);
  Rng rng;
  double a[1];
  const std::vector<double> x{1.0};
  for (std::size_t k = 0; k < 5; ++k) lifted(StepContext{k, 0.1 * static_cast<double>(k), 0.1, x}, rng, a);
  REQUIRE(seen.size() == 5);
  for (const auto& [b0, b1] : seen) {
    CHECK(b0 == -0.75);
    CHECK(b1 == 1.0);
  }
}

TEST_CASE("lifted policy accumulates discounted running reward") {
  const RewardSpec reward{[](double, std::span<const double>, std::span<const double>) { return 2.0; },
                          [](std::span<const double>) { return 0.0; }, 0.5};
  double last_b0 = 0.0;
  double last_b1 = 0.0;
  auto spy = [&](const AugmentedStepContext& c, Rng&, std::span<double> a) {
    last_b0 = c.b0;
    last_b1 = c.b1;
    a[0] = 0.0;
  };
  auto lifted = lift_policy(spy, 1.0, reward, 0.0);
  Rng rng;
  double a[1];
  const std::vector<double> x{1.0};
  double y = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    const double t = 0.25 * static_cast<double>(k);
    lifted(StepContext{k, t, 0.25, x}, rng, a);
    CHECK_THAT(last_b0, WithinAbs(y - 1.0, 1e-15));
    CHECK_THAT(last_b1, WithinAbs(std::exp(-0.5 * t), 1e-15));
    y += std::exp(-0.5 * t) * 2.0 * 0.25;
  }
}
