#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctrsq/augmentation.hpp"
#include "ctrsq/error.hpp"
#include "ctrsq/family.hpp"
#include "ctrsq/meta.hpp"
#include "ctrsq/parallel.hpp"
#include "ctrsq/qlearning.hpp"
#include "ctrsq/scalar_opt.hpp"
#include "ctrsq/sde.hpp"

namespace ctrsq {

/// q(t, x, b0, b1, a) over a scalar action.
using AugmentedActionValue = std::function<double(const AugmentedPoint&, double)>;

inline AugmentedActionValue bind_action_value(ActionValueFamilyPtr family, std::vector<double> params) {
  if (!family) throw InvalidArgument("bind_action_value: missing family");
  if (params.size() != family->size())
    throw InvalidArgument("bind_action_value: parameter count mismatch");
  return [family = std::move(family), params = std::move(params)](const AugmentedPoint& p, double a) {
    return family->value(params, p, a);
  };
}

/// Augmented point that owns its state vector.
struct StatePoint {
  double t;
  std::vector<double> x;
  double b0;
  double b1;

  AugmentedPoint view() const { return {t, x, b0, b1}; }
};

// ---------------------------------------------------------------------------
// Martingale orthogonality

struct TestFunction {
  std::string name;
  std::function<double(const AugmentedPoint&)> fn;
};

/// {1, t, X, B0, J}.
inline std::vector<TestFunction> default_test_functions(AugmentedValue j) {
  return {{"one", [](const AugmentedPoint&) { return 1.0; }},
          {"t", [](const AugmentedPoint& p) { return p.t; }},
          {"x", [](const AugmentedPoint& p) { return p.x[0]; }},
          {"b0", [](const AugmentedPoint& p) { return p.b0; }},
          {"J", [j = std::move(j)](const AugmentedPoint& p) { return j(p); }}};
}

struct MartingaleStat {
  std::string name;
  double mean;
  double stderr_mean;
  double z;
  bool degenerate;  // identically zero test statistic; z reported as 0
};

struct MartingaleReport {
  std::size_t episodes = 0;
  std::vector<MartingaleStat> stats;

  double max_abs_z() const {
    double m = 0.0;
    for (const auto& s : stats) m = std::max(m, std::abs(s.z));
    return m;
  }
  bool passes(double z_threshold) const { return max_abs_z() < z_threshold; }
  const MartingaleStat& at(const std::string& name) const {
    for (const auto& s : stats)
      if (s.name == name) return s;
    throw InvalidArgument("MartingaleReport: no test function '" + name + "'");
  }
};

inline MartingaleStat make_stat(std::string name, const Moments& m) {
  const double se = m.standard_error();
  const bool degenerate = m.sum_sq == 0.0;
  return {std::move(name), m.mean(), se, (degenerate || se == 0.0) ? 0.0 : m.mean() / se, degenerate};
}

/// Monte-Carlo estimate of E[ sum_k xi_k dM_k ] with
/// dM_k = J(t_{k+1}, .) - J(t_k, .) - q(t_k, ., a_k) dt_k, for every test function xi.
/// Episodes start at `start` and follow `policy` (any behavior policy).
template <AugmentedPolicy P>
MartingaleReport martingale_residual(const AugmentedValue& j, const AugmentedActionValue& q,
                                     const P& policy, const AugmentedSde& env,
                                     const TimeGrid& grid, const StatePoint& start,
                                     std::size_t episodes, const RandomStream& stream,
                                     const std::vector<TestFunction>& tests, unsigned threads = 1) {
  if (episodes < 2) throw InvalidArgument("martingale_residual: need at least two episodes");
  if (tests.empty()) throw InvalidArgument("martingale_residual: no test functions");
  if (env.action_dim() != 1) throw InvalidArgument("martingale_residual: scalar actions only");
  const std::size_t nt = tests.size();
  const std::size_t K = grid.steps();

  const auto blocks = map_blocks<std::vector<Moments>>(episodes, threads, [&](std::size_t lo, std::size_t hi) {
    std::vector<Moments> acc(nt);
    std::vector<double> sums(nt);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto traj = simulate_augmented(env, policy, grid, start.x, start.b0, start.b1,
                                           stream.episode(i));
      std::fill(sums.begin(), sums.end(), 0.0);
      double j_curr = j(traj.point(0));
      for (std::size_t k = 0; k < K; ++k) {
        const AugmentedPoint pk = traj.point(k);
        const double j_next = j(traj.point(k + 1));
        const double dm = j_next - j_curr - q(pk, traj.path.actions(k, 0)) * grid.step(k);
        for (std::size_t f = 0; f < nt; ++f) sums[f] += tests[f].fn(pk) * dm;
        j_curr = j_next;
      }
      for (std::size_t f = 0; f < nt; ++f) acc[f].add(sums[f]);
    }
    return acc;
  });

  std::vector<Moments> total(nt);
  for (const auto& b : blocks)
    for (std::size_t f = 0; f < nt; ++f) total[f].merge(b[f]);
  MartingaleReport out;
  out.episodes = episodes;
  for (std::size_t f = 0; f < nt; ++f) out.stats.push_back(make_stat(tests[f].name, total[f]));
  return out;
}

// ---------------------------------------------------------------------------
// Derivatives and generators

struct ValueDerivatives {
  double value = 0.0;
  double dt = 0.0;
  std::vector<double> dx;
  Matrix dxx;
  double db0 = 0.0;
  double db1 = 0.0;
};

using DerivativeOracle = std::function<ValueDerivatives(const AugmentedPoint&)>;

/// Central finite differences with relative steps h1 (first order) and h2
/// (second order): step = h * max(1, |coordinate|).
inline DerivativeOracle finite_difference_derivatives(AugmentedValue j, double h1 = 1e-5,
                                                      double h2 = 1e-4) {
  if (!(h1 > 0.0) || !(h2 > 0.0)) throw InvalidArgument("finite differences: steps must be > 0");
  return [j = std::move(j), h1, h2](const AugmentedPoint& p) {
    const std::size_t d = p.x.size();
    std::vector<double> x(p.x.begin(), p.x.end());
    auto at = [&](double t, double b0, double b1) { return j(AugmentedPoint{t, x, b0, b1}); };
    auto step = [](double h, double v) { return h * std::max(1.0, std::abs(v)); };

    ValueDerivatives out;
    out.value = at(p.t, p.b0, p.b1);
    const double ht = step(h1, p.t);
    out.dt = (at(p.t + ht, p.b0, p.b1) - at(p.t - ht, p.b0, p.b1)) / (2.0 * ht);
    const double hb0 = step(h1, p.b0);
    out.db0 = (at(p.t, p.b0 + hb0, p.b1) - at(p.t, p.b0 - hb0, p.b1)) / (2.0 * hb0);
    const double hb1 = std::min(step(h1, p.b1), 0.5 * p.b1);
    out.db1 = (at(p.t, p.b0, p.b1 + hb1) - at(p.t, p.b0, p.b1 - hb1)) / (2.0 * hb1);

    out.dx.resize(d);
    out.dxx = Matrix(d, d);
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = x[i];
      const double h = step(h1, xi);
      x[i] = xi + h;
      const double up = at(p.t, p.b0, p.b1);
      x[i] = xi - h;
      const double dn = at(p.t, p.b0, p.b1);
      x[i] = xi;
      out.dx[i] = (up - dn) / (2.0 * h);

      const double g = step(h2, xi);
      x[i] = xi + g;
      const double up2 = at(p.t, p.b0, p.b1);
      x[i] = xi - g;
      const double dn2 = at(p.t, p.b0, p.b1);
      x[i] = xi;
      out.dxx(i, i) = (up2 - 2.0 * out.value + dn2) / (g * g);
    }
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = i + 1; k < d; ++k) {
        const double xi = x[i];
        const double xk = x[k];
        const double gi = step(h2, xi);
        const double gk = step(h2, xk);
        auto eval = [&](double si, double sk) {
          x[i] = xi + si * gi;
          x[k] = xk + sk * gk;
          const double v = at(p.t, p.b0, p.b1);
          x[i] = xi;
          x[k] = xk;
          return v;
        };
        const double v = (eval(1, 1) - eval(1, -1) - eval(-1, 1) + eval(-1, -1)) / (4.0 * gi * gk);
        out.dxx(i, k) = v;
        out.dxx(k, i) = v;
      }
    return out;
  };
}

/// Augmented generator L^a f = f_t + mu . f_x + b1 r f_b0 - delta b1 f_b1 + (1/2) tr(sigma sigma' f_xx).
inline double augmented_generator(const AugmentedSde& env, const ValueDerivatives& f,
                                  const AugmentedPoint& p, std::span<const double> a) {
  const std::size_t d = env.state_dim();
  const std::size_t n = env.noise_dim();
  std::vector<double> mu(d);
  std::vector<double> sigma(d * n);
  env.base.drift(p.t, p.x, a, mu);
  env.base.diffusion(p.t, p.x, a, sigma);
  double out = f.dt + p.b1 * env.reward.running(p.t, p.x, a) * f.db0 - env.discount() * p.b1 * f.db1;
  for (std::size_t i = 0; i < d; ++i) out += mu[i] * f.dx[i];
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      double cov = 0.0;
      for (std::size_t w = 0; w < n; ++w) cov += sigma[i * n + w] * sigma[k * n + w];
      out += 0.5 * cov * f.dxx(i, k);
    }
  return out;
}

// ---------------------------------------------------------------------------
// HJB / Feynman-Kac residuals

enum class HjbMode {
  sup,            // sup_a L^a J (zero temperature)
  deterministic,  // L^{a(p)} J for a given feedback action
  gibbs,          // int (L^a J - tau b1 log pi) pi da for a Gibbs policy
};

struct HjbOptions {
  HjbMode mode = HjbMode::sup;
  std::function<double(const AugmentedPoint&)> action;  // deterministic mode
  const GibbsPolicy* policy = nullptr;                   // gibbs mode
  double action_tol = 1e-10;
};

struct HjbResidual {
  double residual = std::numeric_limits<double>::quiet_NaN();
  double action = std::numeric_limits<double>::quiet_NaN();  // maximizer in sup mode
  bool singular = false;
  std::string note;
};

inline std::vector<HjbResidual> hjb_residual(const DerivativeOracle& derivs, const AugmentedSde& env,
                                             const std::vector<StatePoint>& points,
                                             const HjbOptions& opt = {}) {
  if (!derivs) throw InvalidArgument("hjb_residual: missing derivatives");
  if (env.action_dim() != 1) throw InvalidArgument("hjb_residual: scalar actions only");
  if (opt.mode == HjbMode::deterministic && !opt.action)
    throw InvalidArgument("hjb_residual: deterministic mode needs an action rule");
  if (opt.mode == HjbMode::gibbs && opt.policy == nullptr)
    throw InvalidArgument("hjb_residual: gibbs mode needs a policy");

  const ActionSpace& space = env.base.action_space();
  std::vector<HjbResidual> out;
  out.reserve(points.size());
  for (const auto& sp : points) {
    const AugmentedPoint p = sp.view();
    const ValueDerivatives f = derivs(p);
    auto gen = [&](double a) {
      const double av[1] = {a};
      return augmented_generator(env, f, p, av);
    };
    HjbResidual r;
    switch (opt.mode) {
      case HjbMode::sup: {
        auto objective = [&](double a) {
          const double av[1] = {a};
          if (!space.contains(av)) return -std::numeric_limits<double>::infinity();
          return gen(a);
        };
        double lo = -1.0;
        double hi = 1.0;
        if (space.bounded()) {
          lo = space.lower[0];
          hi = space.upper[0];
        }
        try {
          const auto m = maximize_unimodal(objective, lo, hi, opt.action_tol);
          r.residual = m.value;
          r.action = m.argmax;
        } catch (const UnboundedObjective&) {
          r.singular = true;
          r.note = "generator is unbounded above in the action (J_xx >= 0)";
        }
        break;
      }
      case HjbMode::deterministic:
        r.action = opt.action(p);
        r.residual = gen(r.action);
        break;
      case HjbMode::gibbs: {
        const double scale = opt.policy->temperature() * p.b1;
        try {
          const double log_z = normalize_q(*opt.policy, p).log_z;
          double v = 0.0;
          gibbs_expectation(*opt.policy, p, 1,
                            [&](double a, std::span<double> g) {
                              const double log_pi =
                                  opt.policy->family().value(opt.policy->params(), p, a) / scale - log_z;
                              g[0] = gen(a) - scale * log_pi;
                            },
                            std::span<double>(&v, 1));
          r.residual = v;
        } catch (const NotNormalizable& e) {
          r.singular = true;
          r.note = e.what();
        }
        break;
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// q as the first-order coefficient of Q_dt

struct QdtSlope {
  double dt;
  double slope;
  double stderr_slope;
};

struct QdtReport {
  std::vector<QdtSlope> slopes;
  double limit = 0.0;         // extrapolated dt -> 0 intercept
  double stderr_limit = 0.0;
  double q_value = 0.0;       // q(t, x, b0, b1, a)
  double bias_allowance = 0.0;
  double tolerance = 0.0;     // 3 stderr + bias allowance
  bool pass = false;
};

/// Estimates (Q_dt - J) / dt for each dt, where Q_dt plays the constant action
/// `a` on [t, t + dt) and then follows the policy whose value function is J,
/// so Q_dt = E[ J(t + dt, X_{t+dt}, B0, B1) ]. Each window is simulated with
/// steps of `sim_step`, and the martingale part J_x sigma (W_{t+dt} - W_t)
/// is subtracted as a control variate. The limit is the weighted least-squares
/// intercept of slope against dt.
inline QdtReport qdt_expansion_check(const AugmentedValue& j, const DerivativeOracle& derivs,
                                     const AugmentedActionValue& q, double a,
                                     const AugmentedSde& env, const StatePoint& start,
                                     std::span<const double> dt_list, double sim_step,
                                     std::size_t episodes, const RandomStream& stream,
                                     unsigned threads = 1) {
  if (dt_list.size() < 2) throw InvalidArgument("qdt_expansion_check: need at least two dt values");
  if (!(sim_step > 0.0)) throw InvalidArgument("qdt_expansion_check: sim_step must be > 0");
  if (episodes < 2) throw InvalidArgument("qdt_expansion_check: need at least two episodes");
  for (std::size_t i = 1; i < dt_list.size(); ++i)
    if (!(dt_list[i] < dt_list[i - 1]))
      throw InvalidArgument("qdt_expansion_check: dt_list must be decreasing");

  const AugmentedPoint p0 = start.view();
  const ValueDerivatives f0 = derivs(p0);
  const double j0 = f0.value;
  const std::size_t d = env.state_dim();
  const std::size_t n = env.noise_dim();
  std::vector<double> sigma(d * n);
  {
    const double av[1] = {a};
    env.base.diffusion(p0.t, p0.x, av, sigma);
  }
  std::vector<double> cv(n, 0.0);  // J_x' sigma
  for (std::size_t w = 0; w < n; ++w)
    for (std::size_t i = 0; i < d; ++i) cv[w] += f0.dx[i] * sigma[i * n + w];

  const std::vector<double> action{a};
  auto constant = [&action](const AugmentedStepContext&, Rng&, std::span<double> out) {
    std::copy(action.begin(), action.end(), out.begin());
  };

  QdtReport rep;
  rep.q_value = q(p0, a);
  for (std::size_t s = 0; s < dt_list.size(); ++s) {
    const double dt = dt_list[s];
    const double ratio = dt / sim_step;
    const auto m = static_cast<std::size_t>(std::llround(ratio));
    if (m == 0 || std::abs(ratio - static_cast<double>(m)) > 1e-9 * ratio)
      throw InvalidArgument("qdt_expansion_check: each dt must be a multiple of sim_step");
    const TimeGrid window(start.t, start.t + dt, m);
    const RandomStream sub = stream.derive(s, static_cast<std::uint64_t>(StreamTag::evaluation));
    const auto blocks = map_blocks<Moments>(episodes, threads, [&](std::size_t lo, std::size_t hi) {
      Moments acc;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto traj = simulate_augmented(env, constant, window, start.x, start.b0, start.b1,
                                             sub.episode(i));
        double control = 0.0;
        for (std::size_t k = 0; k < m; ++k)
          for (std::size_t w = 0; w < n; ++w) control += cv[w] * traj.path.increments(k, w);
        acc.add((j(traj.point(m)) - j0 - control) / dt);
      }
      return acc;
    });
    Moments total;
    for (const auto& b : blocks) total.merge(b);
    rep.slopes.push_back({dt, total.mean(), total.standard_error()});
  }

  // Weighted least squares slope = L + c dt.
  double sw = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const auto& s : rep.slopes) {
    const double w = 1.0 / std::max(s.stderr_slope * s.stderr_slope, 1e-300);
    sw += w;
    sx += w * s.dt;
    sy += w * s.slope;
    sxx += w * s.dt * s.dt;
    sxy += w * s.dt * s.slope;
  }
  const double det = sw * sxx - sx * sx;
  rep.limit = (sxx * sy - sx * sxy) / det;
  rep.stderr_limit = std::sqrt(sxx / det);
  const auto& finest = rep.slopes.back();
  rep.bias_allowance = std::abs(finest.slope - rep.limit);
  rep.tolerance = 3.0 * rep.stderr_limit + rep.bias_allowance;
  rep.pass = std::abs(rep.limit - rep.q_value) <= rep.tolerance;
  return rep;
}

// ---------------------------------------------------------------------------
// Entropy identity and gradients

/// E_pi[ q(a) - tau b1 log pi(a) ] under the Gibbs policy of q at p. Zero when
/// q is normalized; tau b1 log Z otherwise.
inline double q_mean_check(const GibbsPolicy& policy, const AugmentedPoint& p) {
  const double scale = policy.temperature() * p.b1;
  const double log_z = normalize_q(policy, p).log_z;
  double v = 0.0;
  gibbs_expectation(policy, p, 1,
                    [&](double a, std::span<double> g) {
                      const double qa = policy.family().value(policy.params(), p, a);
                      g[0] = qa - scale * (qa / scale - log_z);
                    },
                    std::span<double>(&v, 1));
  return v;
}

/// max over points and parameters of |analytic - central FD| / (1 + |analytic|),
/// with step h * max(1, |param|).
inline double gradient_check(const ValueFamily& family, std::span<const double> params,
                             const std::vector<StatePoint>& points, double h) {
  if (!(h > 0.0)) throw InvalidArgument("gradient_check: h must be > 0");
  std::vector<double> g(params.size());
  std::vector<double> w(params.begin(), params.end());
  double worst = 0.0;
  for (const auto& sp : points) {
    const AugmentedPoint p = sp.view();
    family.gradient(params, p, g);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double step = h * std::max(1.0, std::abs(params[i]));
      w[i] = params[i] + step;
      const double up = family.value(w, p);
      w[i] = params[i] - step;
      const double dn = family.value(w, p);
      w[i] = params[i];
      worst = std::max(worst, std::abs(g[i] - (up - dn) / (2.0 * step)) / (1.0 + std::abs(g[i])));
    }
  }
  return worst;
}

inline double gradient_check(const ActionValueFamily& family, std::span<const double> params,
                             const std::vector<std::pair<StatePoint, double>>& points, double h) {
  if (!(h > 0.0)) throw InvalidArgument("gradient_check: h must be > 0");
  std::vector<double> g(params.size());
  std::vector<double> w(params.begin(), params.end());
  double worst = 0.0;
  for (const auto& [sp, a] : points) {
    const AugmentedPoint p = sp.view();
    family.gradient(params, p, a, g);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double step = h * std::max(1.0, std::abs(params[i]));
      w[i] = params[i] + step;
      const double up = family.value(w, p, a);
      w[i] = params[i] - step;
      const double dn = family.value(w, p, a);
      w[i] = params[i];
      worst = std::max(worst, std::abs(g[i] - (up - dn) / (2.0 * step)) / (1.0 + std::abs(g[i])));
    }
  }
  return worst;
}

}  // namespace ctrsq
