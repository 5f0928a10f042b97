#include <cmath>
#include <random>
#include <vector>

#include "catch_amalgamated.hpp"
#include "ctrsq/oce.hpp"

using namespace ctrsq;
using Catch::Matchers::WithinAbs;

namespace {

std::vector<double> random_sample(std::uint64_t seed, std::size_t n = 1000) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.3, 1.2);
  std::vector<double> out(n);
  for (double& v : out) v = normal(rng);
  return out;
}

}  // namespace

TEST_CASE("utilities vanish at zero and have the right shape") {
  CHECK(UtilityFunction::linear()(0.0) == 0.0);
  CHECK(UtilityFunction::exponential(2.0)(0.0) == 0.0);
  CHECK(UtilityFunction::mean_variance(1.0)(2.0) == 0.0);
  CHECK(UtilityFunction::cvar(0.5)(-1.0) == -2.0);
  CHECK(UtilityFunction::cvar(0.5)(3.0) == 0.0);
  const auto mmv = UtilityFunction::monotone_mean_variance(1.0);
  CHECK(mmv(5.0) == 0.5);
  CHECK(mmv(0.5) == 0.375);
  CHECK_THROWS_AS(UtilityFunction::cvar(0.0), InvalidArgument);
  CHECK_THROWS_AS(UtilityFunction::power(1.0), InvalidArgument);
  CHECK_THROWS_AS(UtilityFunction::logarithm()(-1.0), NumericDomainError);
}

TEST_CASE("parse accepts the documented spellings") {
  CHECK(UtilityFunction::parse("linear").kind() == UtilityFunction::Kind::linear);
  CHECK(UtilityFunction::parse("cvar:0.25").parameter() == 0.25);
  CHECK(UtilityFunction::parse("mv:1").kind() == UtilityFunction::Kind::mean_variance);
  CHECK_THROWS_AS(UtilityFunction::parse("cvar"), InvalidArgument);
  CHECK_THROWS_AS(UtilityFunction::parse("bogus:1"), InvalidArgument);
}

TEST_CASE("variational and closed forms agree on random samples") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto w = random_sample(seed);
    for (const auto& u : {UtilityFunction::linear(), UtilityFunction::exponential(0.7),
                          UtilityFunction::mean_variance(1.3), UtilityFunction::cvar(0.1),
                          UtilityFunction::cvar(0.5)}) {
      INFO(u.name() << " seed " << seed);
      CHECK_THAT(oce_estimate(u, w).value, WithinAbs(oce_closed_form(u, w), 1e-7));
    }
  }
}

TEST_CASE("power and logarithm closed forms") {
  const std::vector<double> w{1.0, std::exp(2.0)};
  CHECK_THAT(oce_closed_form(UtilityFunction::logarithm(), w), WithinAbs(std::exp(1.0), 1e-14));
  const std::vector<double> v{1.0, 9.0};
  CHECK_THAT(oce_closed_form(UtilityFunction::power(0.5), v), WithinAbs(4.0, 1e-14));
  const std::vector<double> bad{1.0, -1.0};
  CHECK_THROWS_AS(oce_closed_form(UtilityFunction::logarithm(), bad), NumericDomainError);
}

TEST_CASE("delta-infimum utilities collapse to zero on the positive axis") {
  for (double t : {0.1, 1.0, 5.0}) {
    CHECK_THAT(UtilityFunction::logarithm()(t), WithinAbs(0.0, 1e-9));
    CHECK_THAT(UtilityFunction::power(0.5)(t), WithinAbs(0.0, 1e-9));
  }
}

TEST_CASE("shift additivity") {
  const auto w = random_sample(8);
  std::vector<double> shifted(w);
  for (double& v : shifted) v += 2.5;
  for (const auto& u : {UtilityFunction::exponential(0.7), UtilityFunction::mean_variance(1.3),
                        UtilityFunction::cvar(0.2), UtilityFunction::monotone_mean_variance(0.8)}) {
    INFO(u.name());
    CHECK_THAT(oce_estimate(u, shifted).value, WithinAbs(oce_estimate(u, w).value + 2.5, 1e-7));
  }
}

TEST_CASE("CVaR at one half on {1, 2, 3, 4}") {
  const std::vector<double> w{1, 2, 3, 4};
  const auto u = UtilityFunction::cvar(0.5);
  CHECK(oce_estimate(u, w).value == 1.5);
  CHECK(oce_closed_form(u, w) == 1.5);
}

TEST_CASE("linear utility returns the sample mean as both value and maximizer") {
  const std::vector<double> w{1.0, 4.0, -2.0, 5.0};
  const auto e = oce_estimate(UtilityFunction::linear(), w);
  CHECK_THAT(e.value, WithinAbs(2.0, 1e-12));
  CHECK_THAT(e.eta_star, WithinAbs(2.0, 1e-12));
}

TEST_CASE("constant sample under exponential utility") {
  const std::vector<double> w(50, 3.25);
  CHECK_THAT(oce_estimate(UtilityFunction::exponential(1.5), w).value, WithinAbs(3.25, 1e-9));
}

TEST_CASE("mean-variance uses the population variance") {
  const std::vector<double> w{0.0, 2.0};
  CHECK_THAT(oce_closed_form(UtilityFunction::mean_variance(1.0), w), WithinAbs(0.5, 1e-15));
}

TEST_CASE("monotone mean-variance is never above mean-variance") {
  const auto w = random_sample(5);
  CHECK(oce_estimate(UtilityFunction::monotone_mean_variance(1.0), w).value >=
        oce_estimate(UtilityFunction::mean_variance(1.0), w).value - 1e-9);
  CHECK_THROWS_AS(oce_closed_form(UtilityFunction::monotone_mean_variance(1.0), w), UnsupportedKind);
}

TEST_CASE("custom utilities") {
  const std::vector<double> w{0.0, 1.0, 2.0};
  const auto convex = UtilityFunction::custom([](double t) { return std::min(t, 0.0) * 0.5 + std::max(t, 0.0) * 2.0; });
  CHECK_THROWS(oce_estimate(convex, w));
  const auto concave = UtilityFunction::custom([](double t) { return t - 0.25 * t * t; });
  const auto e = oce_estimate(concave, w);
  CHECK_FALSE(e.concavity_warning);
  CHECK_THAT(e.value, WithinAbs(oce_closed_form(UtilityFunction::mean_variance(0.5), w), 1e-8));
}

TEST_CASE("empty samples are rejected") {
  const std::vector<double> w;
  CHECK_THROWS_AS(oce_estimate(UtilityFunction::linear(), w), InvalidArgument);
}
