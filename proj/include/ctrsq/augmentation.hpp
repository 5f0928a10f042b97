#pragma once

#include <cmath>
#include <concepts>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "ctrsq/error.hpp"
#include "ctrsq/oce.hpp"
#include "ctrsq/random.hpp"
#include "ctrsq/sde.hpp"

namespace ctrsq {

/// Payoff Z = int e^{-delta (s-t)} r ds + e^{-delta (T-t)} h(X_T).
struct RewardSpec {
  std::function<double(double t, std::span<const double> x, std::span<const double> a)> running;
  std::function<double(std::span<const double> x)> terminal;
  double discount = 0.0;

  static RewardSpec terminal_only(std::function<double(std::span<const double>)> h,
                                  double discount = 0.0) {
    return {[](double, std::span<const double>, std::span<const double>) { return 0.0; },
            std::move(h), discount};
  }
};

/// Point (t, x, b0, b1) of the augmented state space.
struct AugmentedPoint {
  double t;
  std::span<const double> x;
  double b0;
  double b1;
};

/// Base SDE extended by the bookkeeping states (B0, B1): B0 accumulates
/// discounted reward scaled by B1, B1 carries the discount e^{-delta (s-t)}.
/// Running reward of the augmented problem is zero; the terminal payoff is
/// phi(b0 + b1 h(x)).
struct AugmentedSde {
  ControlledSde base;
  RewardSpec reward;
  UtilityFunction utility;

  std::size_t state_dim() const noexcept { return base.state_dim(); }
  std::size_t noise_dim() const noexcept { return base.noise_dim(); }
  std::size_t action_dim() const noexcept { return base.action_dim(); }
  double discount() const noexcept { return reward.discount; }
};

inline AugmentedSde augment(ControlledSde base, RewardSpec reward, UtilityFunction utility) {
  if (!reward.running || !reward.terminal)
    throw InvalidArgument("augment: reward spec needs both running and terminal rewards");
  if (!(reward.discount >= 0.0) || !std::isfinite(reward.discount))
    throw InvalidArgument("augment: discount must be finite and >= 0");
  return AugmentedSde{std::move(base), std::move(reward), std::move(utility)};
}

/// mu_aug = (mu, b1 r, -delta b1); length d + 2.
inline std::vector<double> augmented_drift(const AugmentedSde& aug, const AugmentedPoint& p,
                                           std::span<const double> a) {
  const std::size_t d = aug.state_dim();
  std::vector<double> out(d + 2);
  aug.base.drift(p.t, p.x, a, std::span<double>(out).first(d));
  out[d] = p.b1 * aug.reward.running(p.t, p.x, a);
  out[d + 1] = -aug.discount() * p.b1;
  return out;
}

/// sigma_aug = (sigma; 0; 0); (d + 2) x n.
inline Matrix augmented_diffusion(const AugmentedSde& aug, const AugmentedPoint& p,
                                  std::span<const double> a) {
  const std::size_t d = aug.state_dim();
  const std::size_t n = aug.noise_dim();
  Matrix out(d + 2, n);
  aug.base.diffusion(p.t, p.x, a, std::span<double>(out.data).first(d * n));
  return out;
}

inline double terminal_payoff(const AugmentedSde& aug, std::span<const double> x, double b0,
                              double b1) {
  if (!(b1 > 0.0)) throw InvalidArgument("terminal_payoff: b1 must be positive");
  return aug.utility(b0 + b1 * aug.reward.terminal(x));
}

/// e^{-delta (t - t0)}.
inline double discount_carrier(double discount, double t, double t0) {
  return discount == 0.0 ? 1.0 : std::exp(-discount * (t - t0));
}

/// One left-endpoint update of Y_s = int_t^s e^{-delta (u-t)} r du. Shared by
/// the augmented simulator and lifted policies so both agree bitwise.
inline double accumulate_reward(double y, double discount, double t, double t0, double reward,
                                double dt) {
  return y + discount_carrier(discount, t, t0) * reward * dt;
}

/// Y on the mesh: Y_{t_0} = 0, left-endpoint quadrature.
inline std::vector<double> cumulative_reward_path(const Trajectory& traj, const RewardSpec& reward) {
  const std::size_t K = traj.steps();
  const double t0 = traj.grid.start();
  std::vector<double> y(K + 1, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double t = traj.grid.time(k);
    const double r = reward.running(t, traj.states.row(k), traj.actions.row(k));
    y[k + 1] = accumulate_reward(y[k], reward.discount, t, t0, r, traj.grid.step(k));
  }
  return y;
}

struct AugmentedStepContext {
  std::size_t step;
  double t;
  double dt;
  std::span<const double> x;
  double b0;
  double b1;

  AugmentedPoint point() const { return {t, x, b0, b1}; }
};

template <class P>
concept AugmentedPolicy =
    std::copy_constructible<P> &&
    std::invocable<P&, const AugmentedStepContext&, Rng&, std::span<double>>;

struct AugmentedTrajectory {
  Trajectory path;
  std::vector<double> b0;  // K + 1
  std::vector<double> b1;  // K + 1

  AugmentedPoint point(std::size_t k) const {
    return {path.grid.time(k), path.states.row(k), b0[k], b1[k]};
  }
  friend bool operator==(const AugmentedTrajectory&, const AugmentedTrajectory&) = default;
};

/// Simulates the augmented SDE: x by Euler-Maruyama on the base SDE, b1 by its
/// exact exponential, b0 = b0_init + b1_init * Y with Y by the left-endpoint rule.
/// Draws follow the same substream layout as simulate().
template <AugmentedPolicy P>
AugmentedTrajectory simulate_augmented(const AugmentedSde& aug, P policy, const TimeGrid& grid,
                                       std::span<const double> x0, double b0_init,
                                       double b1_init, const RandomStream& stream) {
  const std::size_t d = aug.state_dim();
  const std::size_t m = aug.action_dim();
  const std::size_t K = grid.steps();
  if (x0.size() != d) throw InvalidArgument("simulate_augmented: x0 has wrong dimension");
  if (!(b1_init > 0.0)) throw InvalidArgument("simulate_augmented: b1 must be positive");
  if (!std::isfinite(b0_init)) throw InvalidArgument("simulate_augmented: b0 must be finite");
  detail::check_state(x0);

  AugmentedTrajectory out{
      Trajectory{grid, Matrix(K + 1, d), Matrix(K, m),
                 detail::brownian_on_grid(stream.derive(StreamTag::noise), grid, aug.noise_dim())},
      std::vector<double>(K + 1), std::vector<double>(K + 1)};
  Trajectory& traj = out.path;
  Rng action_rng = stream.derive(StreamTag::action).engine();
  detail::EulerScratch scratch(aug.base);
  std::copy(x0.begin(), x0.end(), traj.states.row(0).begin());

  const double t0 = grid.start();
  const double delta = aug.discount();
  double y = 0.0;
  out.b0[0] = b0_init;
  out.b1[0] = b1_init;

  for (std::size_t k = 0; k < K; ++k) {
    const double t = grid.time(k);
    const double dt = grid.step(k);
    auto x = std::span<const double>(traj.states.row(k));
    auto a = traj.actions.row(k);
    try {
      policy(AugmentedStepContext{k, t, dt, x, out.b0[k], out.b1[k]}, action_rng, a);
      detail::check_action(aug.base, a);
      const double r = aug.reward.running(t, x, a);
      detail::euler_step_into(aug.base, t, x, a, dt, traj.increments.row(k), scratch,
                              traj.states.row(k + 1));
      detail::check_state(traj.states.row(k + 1));
      y = accumulate_reward(y, delta, t, t0, r, dt);
    } catch (const NumericDomainError& e) {
      throw NumericDomainError(e.what(), k);
    }
    out.b0[k + 1] = b0_init + b1_init * y;
    out.b1[k + 1] = b1_init * discount_carrier(delta, grid.time(k + 1), t0);
  }
  return out;
}

}  // namespace ctrsq
