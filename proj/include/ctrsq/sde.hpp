#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctrsq/error.hpp"
#include "ctrsq/random.hpp"

namespace ctrsq {

/// Dense row-major matrix; only what the simulator needs.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// Mesh t_0 < t_1 < ... < t_K. Uniform meshes evaluate t_k = t + k (T - t) / K
/// directly and pin t_K = T, so no drift accumulates along the grid.
class TimeGrid {
 public:
  TimeGrid(double start, double horizon, std::size_t steps)
      : start_(start), horizon_(horizon), steps_(steps) {
    if (steps == 0) throw InvalidArgument("TimeGrid: num_steps must be positive");
    if (!(horizon > start) || !std::isfinite(start) || !std::isfinite(horizon))
      throw InvalidArgument("TimeGrid: require finite start < horizon");
  }

  /// Explicit, strictly increasing mesh.
  explicit TimeGrid(std::vector<double> points) : points_(std::move(points)) {
    if (points_.size() < 2) throw InvalidArgument("TimeGrid: need at least two mesh points");
    for (std::size_t k = 0; k + 1 < points_.size(); ++k)
      if (!(points_[k + 1] > points_[k]))
        throw InvalidArgument("TimeGrid: mesh must be strictly increasing");
    start_ = points_.front();
    horizon_ = points_.back();
    steps_ = points_.size() - 1;
  }

  double start() const noexcept { return start_; }
  double horizon() const noexcept { return horizon_; }
  std::size_t steps() const noexcept { return steps_; }
  bool uniform() const noexcept { return points_.empty(); }

  double time(std::size_t k) const {
    if (!points_.empty()) return points_[k];
    if (k == steps_) return horizon_;
    return start_ + static_cast<double>(k) * (horizon_ - start_) / static_cast<double>(steps_);
  }

  /// Step length t_{k+1} - t_k; the nominal (T - t)/K on uniform meshes.
  double step(std::size_t k) const {
    if (!points_.empty()) return points_[k + 1] - points_[k];
    return (horizon_ - start_) / static_cast<double>(steps_);
  }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  double start_ = 0.0;
  double horizon_ = 1.0;
  std::size_t steps_ = 1;
  std::vector<double> points_;
};

struct ActionSpace {
  enum class Kind { unbounded, interval, box };

  Kind kind = Kind::unbounded;
  std::size_t dim = 1;
  std::vector<double> lower;
  std::vector<double> upper;

  static ActionSpace unbounded(std::size_t dim = 1) { return {Kind::unbounded, dim, {}, {}}; }

  static ActionSpace interval(double lo, double hi) {
    if (!(hi > lo)) throw InvalidArgument("ActionSpace: interval requires lo < hi");
    return {Kind::interval, 1, {lo}, {hi}};
  }

  static ActionSpace box(std::vector<double> lo, std::vector<double> hi) {
    if (lo.size() != hi.size() || lo.empty())
      throw InvalidArgument("ActionSpace: box bounds must have equal, positive length");
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (!(hi[i] > lo[i])) throw InvalidArgument("ActionSpace: box requires lo < hi");
    const std::size_t dim = lo.size();
    return {Kind::box, dim, std::move(lo), std::move(hi)};
  }

  bool bounded() const noexcept { return kind != Kind::unbounded; }

  bool contains(std::span<const double> a) const {
    if (a.size() != dim) return false;
    for (std::size_t i = 0; i < dim; ++i) {
      if (!std::isfinite(a[i])) return false;
      if (bounded() && (a[i] < lower[i] || a[i] > upper[i])) return false;
    }
    return true;
  }
};

/// dX = mu(t, X, a) dt + sigma(t, X, a) dW with X in R^d, W in R^n.
/// Coefficient callbacks write into caller-owned buffers; sigma is d x n row-major.
class ControlledSde {
 public:
  using Coefficient = std::function<void(double t, std::span<const double> x,
                                         std::span<const double> a, std::span<double> out)>;

  ControlledSde(std::size_t state_dim, std::size_t noise_dim, ActionSpace actions,
                Coefficient drift, Coefficient diffusion)
      : state_dim_(state_dim),
        noise_dim_(noise_dim),
        actions_(std::move(actions)),
        drift_(std::move(drift)),
        diffusion_(std::move(diffusion)) {
    if (state_dim_ == 0 || noise_dim_ == 0)
      throw InvalidArgument("ControlledSde: state and noise dimensions must be positive");
    if (!drift_ || !diffusion_) throw InvalidArgument("ControlledSde: missing coefficient");
  }

  std::size_t state_dim() const noexcept { return state_dim_; }
  std::size_t noise_dim() const noexcept { return noise_dim_; }
  std::size_t action_dim() const noexcept { return actions_.dim; }
  const ActionSpace& action_space() const noexcept { return actions_; }

  void drift(double t, std::span<const double> x, std::span<const double> a,
             std::span<double> out) const {
    drift_(t, x, a, out);
  }
  void diffusion(double t, std::span<const double> x, std::span<const double> a,
                 std::span<double> out) const {
    diffusion_(t, x, a, out);
  }

 private:
  std::size_t state_dim_;
  std::size_t noise_dim_;
  ActionSpace actions_;
  Coefficient drift_;
  Coefficient diffusion_;
};

struct Trajectory {
  TimeGrid grid;
  Matrix states;       // (K+1) x d
  Matrix actions;      // K x m
  Matrix increments;   // K x n

  std::size_t steps() const noexcept { return grid.steps(); }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// What a policy sees at step k: the mesh point and the current state.
struct StepContext {
  std::size_t step;
  double t;
  double dt;
  std::span<const double> x;
};

/// A sampling rule a_k ~ pi(. | history). Policies are taken by value by the
/// simulator, so any per-trajectory memory lives in the copy owned by that call.
template <class P>
concept Policy = std::copy_constructible<P> &&
                 std::invocable<P&, const StepContext&, Rng&, std::span<double>>;

/// K x n matrix of independent Normal(0, dt) draws.
inline Matrix brownian_increments(const RandomStream& stream, std::size_t steps, double dt,
                                  std::size_t noise_dim) {
  if (steps == 0) throw InvalidArgument("brownian_increments: K must be positive");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("brownian_increments: dt must be positive");
  if (noise_dim == 0) throw InvalidArgument("brownian_increments: n must be positive");
  Rng rng = stream.engine();
  std::normal_distribution<double> normal(0.0, std::sqrt(dt));
  Matrix out(steps, noise_dim);
  for (double& v : out.data) v = normal(rng);
  return out;
}

namespace detail {

inline Matrix brownian_on_grid(const RandomStream& stream, const TimeGrid& grid,
                               std::size_t noise_dim) {
  if (grid.uniform()) return brownian_increments(stream, grid.steps(), grid.step(0), noise_dim);
  Rng rng = stream.engine();
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(grid.steps(), noise_dim);
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const double scale = std::sqrt(grid.step(k));
    for (std::size_t j = 0; j < noise_dim; ++j) out(k, j) = scale * normal(rng);
  }
  return out;
}

/// Scratch buffers for repeated stepping without allocation.
struct EulerScratch {
  std::vector<double> drift;
  std::vector<double> diffusion;

  explicit EulerScratch(const ControlledSde& sde)
      : drift(sde.state_dim()), diffusion(sde.state_dim() * sde.noise_dim()) {}
};

inline void euler_step_into(const ControlledSde& sde, double t, std::span<const double> x,
                            std::span<const double> a, double dt, std::span<const double> dW,
                            EulerScratch& scratch, std::span<double> out) {
  const std::size_t d = sde.state_dim();
  const std::size_t n = sde.noise_dim();
  sde.drift(t, x, a, scratch.drift);
  sde.diffusion(t, x, a, scratch.diffusion);
  for (std::size_t i = 0; i < d; ++i)
    if (!std::isfinite(scratch.drift[i]))
      throw NumericDomainError("euler_step: drift component " + std::to_string(i) +
                               " is not finite");
  for (std::size_t i = 0; i < d * n; ++i)
    if (!std::isfinite(scratch.diffusion[i]))
      throw NumericDomainError("euler_step: diffusion entry (" + std::to_string(i / n) + "," +
                               std::to_string(i % n) + ") is not finite");
  for (std::size_t i = 0; i < d; ++i) {
    double v = x[i] + scratch.drift[i] * dt;
    for (std::size_t j = 0; j < n; ++j) v += scratch.diffusion[i * n + j] * dW[j];
    out[i] = v;
  }
}

inline void check_action(const ControlledSde& sde, std::span<const double> a) {
  if (!sde.action_space().contains(a))
    throw NumericDomainError("action outside the declared action space");
}

inline void check_state(std::span<const double> x) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]))
      throw NumericDomainError("state component " + std::to_string(i) + " is not finite");
}

}  // namespace detail

/// Explicit Euler-Maruyama step x + mu dt + sigma dW.
inline std::vector<double> euler_step(const ControlledSde& sde, double t,
                                      std::span<const double> x, std::span<const double> a,
                                      double dt, std::span<const double> dW) {
  if (!(dt > 0.0)) throw InvalidArgument("euler_step: dt must be positive");
  if (x.size() != sde.state_dim() || dW.size() != sde.noise_dim())
    throw InvalidArgument("euler_step: dimension mismatch");
  detail::check_action(sde, a);
  detail::EulerScratch scratch(sde);
  std::vector<double> out(sde.state_dim());
  detail::euler_step_into(sde, t, x, a, dt, dW, scratch, out);
  return out;
}

/// Simulates one path. Brownian increments come from stream.derive(noise) and
/// action draws from stream.derive(action).
template <Policy P>
Trajectory simulate(const ControlledSde& sde, P policy, const TimeGrid& grid,
                    std::span<const double> x0, const RandomStream& stream) {
  const std::size_t d = sde.state_dim();
  const std::size_t m = sde.action_dim();
  const std::size_t K = grid.steps();
  if (x0.size() != d) throw InvalidArgument("simulate: x0 has wrong dimension");
  detail::check_state(x0);

  Trajectory traj{grid, Matrix(K + 1, d), Matrix(K, m),
                  detail::brownian_on_grid(stream.derive(StreamTag::noise), grid, sde.noise_dim())};
  Rng action_rng = stream.derive(StreamTag::action).engine();
  detail::EulerScratch scratch(sde);
  std::copy(x0.begin(), x0.end(), traj.states.row(0).begin());

  for (std::size_t k = 0; k < K; ++k) {
    const double t = grid.time(k);
    const double dt = grid.step(k);
    auto x = std::span<const double>(traj.states.row(k));
    auto a = traj.actions.row(k);
    try {
      policy(StepContext{k, t, dt, x}, action_rng, a);
      detail::check_action(sde, a);
      detail::euler_step_into(sde, t, x, a, dt, traj.increments.row(k), scratch,
                              traj.states.row(k + 1));
      detail::check_state(traj.states.row(k + 1));
    } catch (const NumericDomainError& e) {
      throw NumericDomainError(e.what(), k);
    }
  }
  return traj;
}

/// Policy that always plays the same action.
struct ConstantPolicy {
  std::vector<double> action;

  void operator()(const StepContext&, Rng&, std::span<double> a) const {
    std::copy(action.begin(), action.end(), a.begin());
  }
};

}  // namespace ctrsq
