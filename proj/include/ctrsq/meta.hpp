#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "ctrsq/augmentation.hpp"
#include "ctrsq/error.hpp"
#include "ctrsq/family.hpp"
#include "ctrsq/scalar_opt.hpp"
#include "ctrsq/sde.hpp"

namespace ctrsq {

/// Augmented value function J(t, x, b0, b1), typically a family bound to parameters.
using AugmentedValue = std::function<double(const AugmentedPoint&)>;

inline AugmentedValue bind_value(ValueFamilyPtr family, std::vector<double> params) {
  if (!family) throw InvalidArgument("bind_value: missing family");
  if (params.size() != family->size()) throw InvalidArgument("bind_value: parameter count mismatch");
  return [family = std::move(family), params = std::move(params)](const AugmentedPoint& p) {
    return family->value(params, p);
  };
}

struct BudgetOptions {
  double tol = 1e-8;
  double max_abs = 1e6;
};

/// argmax_b { b + J(t, x, -b, 1) }. Assumes the objective is unimodal in b.
inline double optimal_budget(const AugmentedValue& jstar, double t, std::span<const double> x,
                             BudgetOptions opt = {}) {
  if (!jstar) throw InvalidArgument("optimal_budget: missing value function");
  if (!(opt.tol > 0.0)) throw InvalidArgument("optimal_budget: tol must be positive");
  auto g = [&](double b) { return b + jstar(AugmentedPoint{t, x, -b, 1.0}); };
  const auto r = maximize_unimodal(g, -1.0, 1.0, opt.tol, opt.max_abs);
  if (r.spread <= opt.tol * std::max(1.0, std::abs(r.value))) return 0.0;
  return r.argmax;
}

/// b* + J(t, x, -b*, 1).
inline double optimal_value(const AugmentedValue& jstar, double t, std::span<const double> x,
                            double b_star) {
  return b_star + jstar(AugmentedPoint{t, x, -b_star, 1.0});
}

/// Base-SDE policy that keeps Y_s online and delegates to the augmented
/// policy at (s, X_s, Y_s - b*, e^{-delta (s - t)}). Y lives in the copy
/// owned by the simulation call.
template <AugmentedPolicy P>
class LiftedPolicy {
 public:
  LiftedPolicy(P inner, double b_star, RewardSpec reward, double start_time)
      : inner_(std::move(inner)), b_star_(b_star), reward_(std::move(reward)), t0_(start_time) {}

  double b_star() const noexcept { return b_star_; }
  double start_time() const noexcept { return t0_; }
  double cumulative_reward() const noexcept { return y_; }

  void operator()(const StepContext& c, Rng& rng, std::span<double> a) {
    if (c.step == 0) {
      y_ = 0.0;
    } else {
      y_ = accumulate_reward(y_, reward_.discount, prev_t_, t0_,
                             reward_.running(prev_t_, prev_x_, prev_a_), prev_dt_);
    }
    const double b0 = y_ - b_star_;
    const double b1 = discount_carrier(reward_.discount, c.t, t0_);
    inner_(AugmentedStepContext{c.step, c.t, c.dt, c.x, b0, b1}, rng, a);
    prev_t_ = c.t;
    prev_dt_ = c.dt;
    prev_x_.assign(c.x.begin(), c.x.end());
    prev_a_.assign(a.begin(), a.end());
  }

 private:
  P inner_;
  double b_star_;
  RewardSpec reward_;
  double t0_;
  double y_ = 0.0;
  double prev_t_ = 0.0;
  double prev_dt_ = 0.0;
  std::vector<double> prev_x_;
  std::vector<double> prev_a_;
};

template <AugmentedPolicy P>
LiftedPolicy<P> lift_policy(P pi_aug, double b_star, RewardSpec reward, double start_time) {
  return LiftedPolicy<P>(std::move(pi_aug), b_star, std::move(reward), start_time);
}

}  // namespace ctrsq
