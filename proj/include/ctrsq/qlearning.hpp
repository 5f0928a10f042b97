#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctrsq/augmentation.hpp"
#include "ctrsq/error.hpp"
#include "ctrsq/family.hpp"
#include "ctrsq/quadrature.hpp"
#include "ctrsq/random.hpp"

namespace ctrsq {

struct Interval {
  double lo;
  double hi;
};

inline constexpr std::size_t gibbs_grid_cells = 4096;

/// pi(a | t, x, b0, b1) proportional to exp{ q(t, x, b0, b1, a) / (tau b1) }.
class GibbsPolicy {
 public:
  GibbsPolicy(ActionValueFamilyPtr q, std::vector<double> params, double temperature,
              ActionSpace actions = ActionSpace::unbounded(),
              std::optional<Interval> sampling_range = std::nullopt)
      : q_(std::move(q)),
        params_(std::move(params)),
        temperature_(temperature),
        actions_(std::move(actions)),
        range_(sampling_range) {
    if (!q_) throw InvalidArgument("GibbsPolicy: missing q family");
    if (!(temperature_ > 0.0)) throw InvalidArgument("GibbsPolicy: temperature must be > 0");
    if (actions_.dim != 1) throw InvalidArgument("GibbsPolicy: only scalar actions are supported");
    if (params_.size() != q_->size()) throw InvalidArgument("GibbsPolicy: parameter count mismatch");
    if (range_ && !(range_->hi > range_->lo))
      throw InvalidArgument("GibbsPolicy: sampling range needs lo < hi");
  }

  const ActionValueFamily& family() const noexcept { return *q_; }
  const ActionValueFamilyPtr& family_ptr() const noexcept { return q_; }
  std::span<const double> params() const noexcept { return params_; }
  double temperature() const noexcept { return temperature_; }
  const ActionSpace& actions() const noexcept { return actions_; }
  std::optional<Interval> sampling_range() const noexcept { return range_; }

  /// Gaussian form N(argmax, tau b1 / (2 |curvature|)) when the family declares
  /// a quadratic shape on an unbounded action space.
  std::optional<std::pair<double, double>> gaussian(const AugmentedPoint& p) const {
    if (actions_.bounded()) return std::nullopt;
    const auto quad = q_->quadratic(params_, p);
    if (!quad) return std::nullopt;
    if (!(quad->curvature < 0.0) || !std::isfinite(quad->curvature) || !std::isfinite(quad->argmax))
      throw NotNormalizable("Gibbs density with curvature " + std::to_string(quad->curvature) +
                            " on an unbounded action space is not normalizable");
    return std::pair{quad->argmax, temperature_ * p.b1 / (2.0 * -quad->curvature)};
  }

  /// Integration range for grid-based sampling and quadrature.
  Interval grid_range() const {
    if (actions_.bounded()) return {actions_.lower[0], actions_.upper[0]};
    if (range_) return *range_;
    throw NotNormalizable(
        "Gibbs density on an unbounded action space needs a quadratic q or a sampling range");
  }

  double sample(const AugmentedPoint& p, Rng& rng) const {
    if (!(p.b1 > 0.0)) throw InvalidArgument("gibbs_sample: b1 must be positive");
    if (const auto g = gaussian(p)) {
      std::normal_distribution<double> normal(g->first, std::sqrt(g->second));
      return normal(rng);
    }
    return sample_on_grid(p, rng);
  }

  void operator()(const AugmentedStepContext& c, Rng& rng, std::span<double> a) const {
    a[0] = sample(c.point(), rng);
  }

 private:
  double sample_on_grid(const AugmentedPoint& p, Rng& rng) const {
    const Interval r = grid_range();
    const double width = (r.hi - r.lo) / static_cast<double>(gibbs_grid_cells);
    std::vector<double> logw(gibbs_grid_cells);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < gibbs_grid_cells; ++i) {
      const double a = r.lo + (static_cast<double>(i) + 0.5) * width;
      logw[i] = q_->value(params_, p, a) / (temperature_ * p.b1);
      top = std::max(top, logw[i]);
    }
    if (!std::isfinite(top)) throw NotNormalizable("Gibbs density has no finite mass on the grid");
    std::vector<double> cdf(gibbs_grid_cells);
    double acc = 0.0;
    for (std::size_t i = 0; i < gibbs_grid_cells; ++i) {
      acc += std::exp(logw[i] - top);
      cdf[i] = acc;
    }
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng) * acc;
    const auto cell = static_cast<std::size_t>(
        std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    const std::size_t i = std::min(cell, gibbs_grid_cells - 1);
    return r.lo + (static_cast<double>(i) + unif(rng)) * width;
  }

  ActionValueFamilyPtr q_;
  std::vector<double> params_;
  double temperature_;
  ActionSpace actions_;
  std::optional<Interval> range_;
};

inline double gibbs_sample(const GibbsPolicy& policy, double t, std::span<const double> x,
                           double b0, double b1, Rng& rng) {
  return policy.sample({t, x, b0, b1}, rng);
}

inline double gibbs_sample(const GibbsPolicy& policy, double t, std::span<const double> x,
                           double b0, double b1, const RandomStream& stream) {
  Rng rng = stream.engine();
  return gibbs_sample(policy, t, x, b0, b1, rng);
}

/// log Z with Z = int exp{ q(a) / (tau b1) } da, and the shift tau b1 log Z that
/// turns q into the normalized q~ = q - tau b1 log Z.
struct NormalizedQ {
  double log_z;
  double shift;
};

inline NormalizedQ normalize_q(const GibbsPolicy& policy, const AugmentedPoint& p) {
  const double scale = policy.temperature() * p.b1;
  if (!(scale > 0.0)) throw InvalidArgument("normalize_q: tau * b1 must be positive");
  if (!policy.actions().bounded()) {
    if (const auto quad = policy.family().quadratic(policy.params(), p)) {
      if (!(quad->curvature < 0.0))
        throw NotNormalizable("normalize_q: non-negative curvature on an unbounded action space");
      const double log_z =
          quad->peak / scale + 0.5 * std::log(std::numbers::pi * scale / -quad->curvature);
      return {log_z, scale * log_z};
    }
  }
  const Interval r = policy.grid_range();
  const double width = (r.hi - r.lo) / static_cast<double>(gibbs_grid_cells);
  std::vector<double> logw(gibbs_grid_cells);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < gibbs_grid_cells; ++i) {
    const double a = r.lo + (static_cast<double>(i) + 0.5) * width;
    logw[i] = policy.family().value(policy.params(), p, a) / scale;
    top = std::max(top, logw[i]);
  }
  if (!std::isfinite(top)) throw NotNormalizable("normalize_q: no finite mass on the grid");
  double acc = 0.0;
  for (double v : logw) acc += std::exp(v - top);
  const double log_z = top + std::log(acc * width);
  return {log_z, scale * log_z};
}

inline NormalizedQ normalize_q(ActionValueFamilyPtr q, std::span<const double> params,
                               const AugmentedPoint& p, double temperature,
                               ActionSpace actions = ActionSpace::unbounded(),
                               std::optional<Interval> range = std::nullopt) {
  return normalize_q(
      GibbsPolicy(std::move(q), {params.begin(), params.end()}, temperature, std::move(actions), range),
      p);
}

/// E_pi[ f(a) ] for a vector-valued f under the Gibbs policy at p.
template <class F>
void gibbs_expectation(const GibbsPolicy& policy, const AugmentedPoint& p, std::size_t dim,
                       F&& f, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  std::vector<double> buf(dim);
  if (const auto g = policy.gaussian(p)) {
    const auto& rule = gauss_hermite_24();
    const double scale = std::sqrt(2.0 * g->second);
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      f(g->first + scale * rule.nodes[i], std::span<double>(buf));
      for (std::size_t j = 0; j < dim; ++j) out[j] += rule.weights[i] * buf[j];
    }
    for (double& v : out) v /= std::sqrt(std::numbers::pi);
    return;
  }
  const Interval r = policy.grid_range();
  const double width = (r.hi - r.lo) / static_cast<double>(gibbs_grid_cells);
  const double scale = policy.temperature() * p.b1;
  std::vector<double> logw(gibbs_grid_cells);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < gibbs_grid_cells; ++i) {
    const double a = r.lo + (static_cast<double>(i) + 0.5) * width;
    logw[i] = policy.family().value(policy.params(), p, a) / scale;
    top = std::max(top, logw[i]);
  }
  double mass = 0.0;
  for (std::size_t i = 0; i < gibbs_grid_cells; ++i) {
    const double w = std::exp(logw[i] - top);
    if (w == 0.0) continue;
    mass += w;
    f(r.lo + (static_cast<double>(i) + 0.5) * width, std::span<double>(buf));
    for (std::size_t j = 0; j < dim; ++j) out[j] += w * buf[j];
  }
  for (double& v : out) v /= mass;
}

/// J_{k+1} - J_k - q_k dt.
inline double td_delta(double j_next, double j_curr, double q_curr, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("td_delta: dt must be positive");
  return j_next - j_curr - q_curr * dt;
}

struct EpisodeUpdate {
  std::vector<double> dtheta;
  std::vector<double> dpsi;
};

/// How q enters the temporal difference. With `normalized_q`, q is replaced by
/// q~ = q - tau b1 log Z under `policy` and its gradient by zeta - E_pi[zeta].
struct QMode {
  bool normalized_q = false;
  const GibbsPolicy* policy = nullptr;
};

/// Delta theta = sum_k xi_k delta_k, Delta psi = sum_k zeta_k delta_k, with xi and zeta
/// the parameter gradients of J and q at the pre-update parameters.
inline EpisodeUpdate episode_update(const AugmentedTrajectory& traj, const ValueFamily& jfam,
                                    std::span<const double> theta, const ActionValueFamily& qfam,
                                    std::span<const double> psi, QMode mode = {}) {
  const std::size_t K = traj.path.steps();
  const std::size_t nt = theta.size();
  const std::size_t np = psi.size();
  if (nt != jfam.size() || np != qfam.size())
    throw InvalidArgument("episode_update: parameter count mismatch");
  if (mode.normalized_q && mode.policy == nullptr)
    throw InvalidArgument("episode_update: normalized q needs the sampling policy");

  EpisodeUpdate out{std::vector<double>(nt, 0.0), std::vector<double>(np, 0.0)};
  std::vector<double> xi(nt);
  std::vector<double> zeta(np);
  std::vector<double> mean_zeta(np);

  auto finite = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double e) { return std::isfinite(e); });
  };

  double j_curr = jfam.value_and_gradient(theta, traj.point(0), xi);
  for (std::size_t k = 0; k < K; ++k) {
    const AugmentedPoint pk = traj.point(k);
    const double a = traj.path.actions(k, 0);
    double q = qfam.value_and_gradient(psi, pk, a, zeta);
    if (mode.normalized_q) {
      q -= normalize_q(*mode.policy, pk).shift;
      gibbs_expectation(
          *mode.policy, pk, np,
          [&](double act, std::span<double> g) { qfam.gradient(psi, pk, act, g); }, mean_zeta);
      for (std::size_t i = 0; i < np; ++i) zeta[i] -= mean_zeta[i];
    }
    if (!finite(xi) || !finite(zeta) || !std::isfinite(q) || !std::isfinite(j_curr))
      throw NumericDomainError("episode_update: non-finite gradient or value", k);

    std::vector<double> xi_next(nt);
    const double j_next = k + 1 < K ? jfam.value_and_gradient(theta, traj.point(k + 1), xi_next)
                                    : jfam.value(theta, traj.point(k + 1));
    const double delta = td_delta(j_next, j_curr, q, traj.path.grid.step(k));
    if (!std::isfinite(delta)) throw NumericDomainError("episode_update: non-finite TD", k);
    for (std::size_t i = 0; i < nt; ++i) out.dtheta[i] += xi[i] * delta;
    for (std::size_t i = 0; i < np; ++i) out.dpsi[i] += zeta[i] * delta;
    xi.swap(xi_next);
    j_curr = j_next;
  }
  return out;
}

/// l_j = initial / (1 + j / decay_episodes); constant when decay_episodes <= 0.
struct LearningRateSchedule {
  double initial = 5e-3;
  double decay_episodes = 0.0;

  double at(std::size_t episode) const {
    if (decay_episodes <= 0.0) return initial;
    return initial / (1.0 + static_cast<double>(episode) / decay_episodes);
  }
};

struct TrainingConfig {
  std::size_t episodes = 20000;
  TimeGrid grid{0.0, 1.0, 1000};
  LearningRateSchedule lr_theta{};
  LearningRateSchedule lr_psi{};
  // Per-component multipliers on the schedules; empty means all ones.
  std::vector<double> theta_rate_scale;
  std::vector<double> psi_rate_scale;
  double temperature = 0.05;
  std::vector<double> theta0;
  std::vector<double> psi0;
  std::vector<double> x0{1.0};
  double b0_init = 0.0;
  double b1_init = 1.0;
  double divergence_bound = 1e6;
  bool normalized_q = false;
  ActionSpace actions = ActionSpace::unbounded();
  std::optional<Interval> sampling_range;
};

struct TrainingRecord {
  std::size_t episode;
  std::vector<double> theta;
  std::vector<double> psi;
  double delta_norm_theta;
  double delta_norm_psi;
  double terminal_payoff;

  friend bool operator==(const TrainingRecord&, const TrainingRecord&) = default;
};

struct TrainingLog {
  std::vector<std::string> theta_names;
  std::vector<std::string> psi_names;
  std::vector<double> theta0;
  std::vector<double> psi0;
  std::vector<TrainingRecord> records;

  const std::vector<double>& final_theta() const { return records.empty() ? theta0 : records.back().theta; }
  const std::vector<double>& final_psi() const { return records.empty() ? psi0 : records.back().psi; }

  friend bool operator==(const TrainingLog&, const TrainingLog&) = default;
};

namespace detail {
inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double e : v) s += e * e;
  return std::sqrt(s);
}
}  // namespace detail

/// On-policy CT-RS-q: per episode, simulate the augmented SDE under the Gibbs
/// policy of the current q, then move theta and psi along the accumulated
/// gradient-weighted temporal differences.
inline TrainingLog train(const AugmentedSde& env, const ValueFamily& jfam,
                         const ActionValueFamilyPtr& qfam, const TrainingConfig& cfg,
                         const RandomStream& stream) {
  if (!qfam) throw InvalidArgument("train: missing q family");
  if (cfg.episodes == 0) throw InvalidArgument("train: need at least one episode");
  if (!(cfg.temperature > 0.0)) throw InvalidArgument("train: temperature must be > 0");
  if (cfg.theta0.size() != jfam.size() || cfg.psi0.size() != qfam->size())
    throw InvalidArgument("train: initial parameters do not match the families");
  if (!(cfg.lr_theta.initial >= 0.0) || !(cfg.lr_psi.initial >= 0.0))
    throw InvalidArgument("train: learning rates must be non-negative");
  auto scales = [](const std::vector<double>& v, std::size_t n, const char* who) {
    if (v.empty()) return std::vector<double>(n, 1.0);
    if (v.size() != n) throw InvalidArgument(std::string("train: ") + who + " has the wrong length");
    for (double e : v)
      if (!(e >= 0.0) || !std::isfinite(e))
        throw InvalidArgument(std::string("train: ") + who + " entries must be finite and >= 0");
    return v;
  };
  const auto theta_scale = scales(cfg.theta_rate_scale, jfam.size(), "theta_rate_scale");
  const auto psi_scale = scales(cfg.psi_rate_scale, qfam->size(), "psi_rate_scale");

  TrainingLog log{jfam.parameter_names(), qfam->parameter_names(), cfg.theta0, cfg.psi0, {}};
  log.records.reserve(cfg.episodes);
  std::vector<double> theta = cfg.theta0;
  std::vector<double> psi = cfg.psi0;
  const std::size_t K = cfg.grid.steps();

  for (std::size_t j = 0; j < cfg.episodes; ++j) {
    EpisodeUpdate upd;
    double payoff = 0.0;
    try {
      const GibbsPolicy policy(qfam, psi, cfg.temperature, cfg.actions, cfg.sampling_range);
      const auto traj = simulate_augmented(env, policy, cfg.grid, cfg.x0, cfg.b0_init,
                                           cfg.b1_init, stream.episode(j));
      upd = episode_update(traj, jfam, theta, *qfam, psi, QMode{cfg.normalized_q, &policy});
      payoff = terminal_payoff(env, traj.path.states.row(K), traj.b0[K], traj.b1[K]);
    } catch (const NumericDomainError& e) {
      throw DivergenceError(e.what(), j);
    } catch (const NotNormalizable& e) {
      throw DivergenceError(e.what(), j);
    }

    const double lt = cfg.lr_theta.at(j);
    const double lp = cfg.lr_psi.at(j);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += lt * theta_scale[i] * upd.dtheta[i];
    for (std::size_t i = 0; i < psi.size(); ++i) psi[i] += lp * psi_scale[i] * upd.dpsi[i];
    for (std::size_t i = 0; i < theta.size(); ++i)
      if (!std::isfinite(theta[i]) || std::abs(theta[i]) > cfg.divergence_bound)
        throw DivergenceError("train: parameter " + log.theta_names[i] + " left its bound", j);
    for (std::size_t i = 0; i < psi.size(); ++i)
      if (!std::isfinite(psi[i]) || std::abs(psi[i]) > cfg.divergence_bound)
        throw DivergenceError("train: parameter " + log.psi_names[i] + " left its bound", j);

    log.records.push_back(TrainingRecord{j + 1, theta, psi, detail::l2_norm(upd.dtheta),
                                         detail::l2_norm(upd.dpsi), payoff});
  }
  return log;
}

}  // namespace ctrsq
