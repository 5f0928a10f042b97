#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctrsq/augmentation.hpp"
#include "ctrsq/error.hpp"
#include "ctrsq/family.hpp"
#include "ctrsq/meta.hpp"
#include "ctrsq/oce.hpp"
#include "ctrsq/parallel.hpp"
#include "ctrsq/qlearning.hpp"
#include "ctrsq/random.hpp"
#include "ctrsq/sde.hpp"

namespace ctrsq::portfolio {

/// Two-asset log-normal market with a mean-variance investor.
struct MarketParams {
  double r1 = 0.15;
  double r2 = 0.25;
  double sigma1 = 0.1;
  double sigma2 = 0.12;
  double alpha = 1.0;
  double T = 1.0;
  double x0 = 1.0;

  void validate() const {
    for (double v : {r1, r2, sigma1, sigma2, alpha, T, x0})
      if (!std::isfinite(v)) throw InvalidArgument("MarketParams: non-finite field");
    if (!(sigma1 >= 0.0) || !(sigma2 >= 0.0) || !(sigma1 * sigma1 + sigma2 * sigma2 > 0.0))
      throw InvalidArgument("MarketParams: need sigma1, sigma2 >= 0 and sigma1^2 + sigma2^2 > 0");
    if (!(alpha > 0.0)) throw InvalidArgument("MarketParams: alpha must be > 0");
    if (!(T > 0.0)) throw InvalidArgument("MarketParams: T must be > 0");
  }

  double total_variance() const { return sigma1 * sigma1 + sigma2 * sigma2; }
};

struct MarketConstants {
  double Px;
  double Pxx;
  double Pnl;
};

inline MarketConstants market_constants(const MarketParams& m) {
  const double s1 = m.sigma1 * m.sigma1;
  const double s2 = m.sigma2 * m.sigma2;
  const double s = s1 + s2;
  if (!(s > 0.0)) throw InvalidArgument("market_constants: sigma1^2 + sigma2^2 must be > 0");
  const double dr = m.r1 - m.r2;
  return {(m.r1 * s2 + m.r2 * s1) / s, s1 * s2 / (2.0 * s), dr * dr / (2.0 * s)};
}

/// dX = X (a r1 + (1-a) r2) dt + X a sigma1 dW1 + X (1-a) sigma2 dW2; shorting allowed.
inline ControlledSde wealth_sde(const MarketParams& m) {
  m.validate();
  return ControlledSde(
      1, 2, ActionSpace::unbounded(1),
      [m](double, std::span<const double> x, std::span<const double> a, std::span<double> out) {
        out[0] = x[0] * (a[0] * m.r1 + (1.0 - a[0]) * m.r2);
      },
      [m](double, std::span<const double> x, std::span<const double> a, std::span<double> out) {
        out[0] = x[0] * a[0] * m.sigma1;
        out[1] = x[0] * (1.0 - a[0]) * m.sigma2;
      });
}

/// Augmented problem: terminal reward h(x) = x, no running reward, delta = 0,
/// phi(t) = t - (alpha/2) t^2.
inline AugmentedSde mv_environment(const MarketParams& m) {
  return augment(wealth_sde(m), RewardSpec::terminal_only([](std::span<const double> x) { return x[0]; }),
                 UtilityFunction::mean_variance(m.alpha));
}

struct CCoefficients {
  double c0;
  double c1;
  double c2;
};

namespace detail {

/// (1 - e^{-2 S tau}) / S with its S -> 0 limit.
inline double decay_ratio(double S, double tau) {
  const double z = 2.0 * S * tau;
  if (std::abs(z) < 1e-6) return 2.0 * tau * (1.0 - 0.5 * z + z * z / 6.0);
  return -std::expm1(-z) / S;
}

/// d/dS of decay_ratio.
inline double decay_ratio_ds(double S, double tau) {
  const double z = 2.0 * S * tau;
  if (std::abs(z) < 1e-6) return -2.0 * tau * tau * (1.0 - 2.0 * z / 3.0);
  return std::expm1(-z) / (S * S) + 2.0 * tau * std::exp(-z) / S;
}

inline void check_b1(double b1) {
  if (!(b1 > 0.0)) throw InvalidArgument("portfolio: b1 must be positive");
}

}  // namespace detail

/// c0, c1, c2 of J* = c0 + c1 x + c2 x^2, for constants (Px, Pxx, Pnl).
inline CCoefficients c_coefficients(double t, double b0, double b1, const MarketConstants& mc,
                                    double alpha, double T) {
  detail::check_b1(b1);
  if (!(alpha > 0.0)) throw InvalidArgument("c_coefficients: alpha must be > 0");
  const double tau = T - t;
  const double w = 1.0 - alpha * b0;
  const double S = mc.Pxx + mc.Pnl;
  return {b0 * (1.0 - 0.5 * alpha * b0) + w * w * mc.Pnl / (2.0 * alpha) * detail::decay_ratio(S, tau),
          w * b1 * std::exp((mc.Px - 2.0 * mc.Pnl) * tau),
          -0.5 * alpha * b1 * b1 * std::exp(2.0 * (mc.Px + mc.Pxx - mc.Pnl) * tau)};
}

/// Time derivatives of (c0, c1, c2).
inline CCoefficients c_coefficients_dt(double t, double b0, double b1, const MarketConstants& mc,
                                       double alpha, double T) {
  const auto c = c_coefficients(t, b0, b1, mc, alpha, T);
  const double w = 1.0 - alpha * b0;
  const double S = mc.Pxx + mc.Pnl;
  return {-w * w * mc.Pnl / alpha * std::exp(-2.0 * S * (T - t)),
          -(mc.Px - 2.0 * mc.Pnl) * c.c1,
          -2.0 * (mc.Px + mc.Pxx - mc.Pnl) * c.c2};
}

inline CCoefficients c_coefficients(double t, double b0, double b1, const MarketParams& m) {
  return c_coefficients(t, b0, b1, market_constants(m), m.alpha, m.T);
}

/// a* = s2^2/(s1^2+s2^2) - (r1-r2)/(s1^2+s2^2) (1 + c1/(2 c2 x)).
inline double optimal_control(double t, double x, double b0, double b1, const MarketParams& m) {
  if (x == 0.0)
    throw NumericDomainError("optimal_control: the optimal action is singular at x = 0");
  const auto c = c_coefficients(t, b0, b1, m);
  const double s = m.total_variance();
  return m.sigma2 * m.sigma2 / s - (m.r1 - m.r2) / s * (1.0 + c.c1 / (2.0 * c.c2 * x));
}

inline double optimal_value(double t, double x, double b0, double b1, const MarketParams& m) {
  const auto c = c_coefficients(t, b0, b1, m);
  return c.c0 + c.c1 * x + c.c2 * x * x;
}

inline double optimal_q(double t, double x, double b0, double b1, double a, const MarketParams& m) {
  const auto c = c_coefficients(t, b0, b1, m);
  const double d = a - optimal_control(t, x, b0, b1, m);
  return m.total_variance() * c.c2 * x * x * d * d;
}

/// Value and partial derivatives of J* at one augmented point (scalar state).
struct ValueJet {
  double value;
  double dt;
  double dx;
  double dxx;
  double db0;
  double db1;
};

inline ValueJet optimal_value_jet(double t, double x, double b0, double b1, const MarketParams& m) {
  const auto mc = market_constants(m);
  const auto c = c_coefficients(t, b0, b1, mc, m.alpha, m.T);
  const auto cd = c_coefficients_dt(t, b0, b1, mc, m.alpha, m.T);
  const double tau = m.T - t;
  const double w = 1.0 - m.alpha * b0;
  const double G = mc.Pnl / (2.0 * m.alpha) * detail::decay_ratio(mc.Pxx + mc.Pnl, tau);
  const double c0_b0 = w - 2.0 * m.alpha * w * G;
  const double c1_b0 = -m.alpha * b1 * std::exp((mc.Px - 2.0 * mc.Pnl) * tau);
  return {c.c0 + c.c1 * x + c.c2 * x * x,
          cd.c0 + cd.c1 * x + cd.c2 * x * x,
          c.c1 + 2.0 * c.c2 * x,
          2.0 * c.c2,
          c0_b0 + c1_b0 * x,
          c.c1 / b1 * x + 2.0 * c.c2 / b1 * x * x};
}

/// Residual of dJ/dt + Px x J_x + Pxx x^2 J_xx - Pnl (J_x)^2 / J_xx at one point.
inline double hjb_residual_closed_form(const ValueJet& j, double x, const MarketConstants& mc) {
  if (!(j.dxx < 0.0)) throw NumericDomainError("hjb_residual: J_xx must be negative");
  return j.dt + mc.Px * x * j.dx + mc.Pxx * x * x * j.dxx - mc.Pnl * j.dx * j.dx / j.dxx;
}

struct ThetaParams {
  double theta_Px;
  double theta_Pxx;
  double theta_Pnl;

  std::vector<double> vec() const { return {theta_Px, theta_Pxx, theta_Pnl}; }
};

struct PsiParams {
  double psi_a0;
  double psi_a1;
  double psi_sv;
  double psi_c1e;
  double psi_c2e;

  std::vector<double> vec() const { return {psi_a0, psi_a1, psi_sv, psi_c1e, psi_c2e}; }
};

/// J^theta = c0^theta + c1^theta x + c2^theta x^2: the oracle form with
/// (Px, Pxx, Pnl) replaced by theta.
class ThetaValueFamily final : public ValueFamily {
 public:
  ThetaValueFamily(double alpha, double T) : alpha_(alpha), T_(T) {
    if (!(alpha > 0.0)) throw InvalidArgument("theta family: alpha must be > 0");
  }

  std::vector<std::string> parameter_names() const override {
    return {"theta_Px", "theta_Pxx", "theta_Pnl"};
  }

  double value(std::span<const double> th, const AugmentedPoint& p) const override {
    const auto c = c_coefficients(p.t, p.b0, p.b1, MarketConstants{th[0], th[1], th[2]}, alpha_, T_);
    const double x = p.x[0];
    return c.c0 + c.c1 * x + c.c2 * x * x;
  }

  void gradient(std::span<const double> th, const AugmentedPoint& p,
                std::span<double> out) const override {
    value_and_gradient(th, p, out);
  }

  double value_and_gradient(std::span<const double> th, const AugmentedPoint& p,
                            std::span<double> out) const override {
    detail::check_b1(p.b1);
    const double tau = T_ - p.t;
    const double x = p.x[0];
    const double w = 1.0 - alpha_ * p.b0;
    const double A = w * w / (2.0 * alpha_);
    const double S = th[1] + th[2];
    const double F = detail::decay_ratio(S, tau);
    const double dF = detail::decay_ratio_ds(S, tau);
    const double c0 = p.b0 * (1.0 - 0.5 * alpha_ * p.b0) + A * th[2] * F;
    const double c1 = w * p.b1 * std::exp((th[0] - 2.0 * th[2]) * tau);
    const double c2 = -0.5 * alpha_ * p.b1 * p.b1 * std::exp(2.0 * (th[0] + th[1] - th[2]) * tau);
    const double lin = tau * c1 * x;
    const double quad = 2.0 * tau * c2 * x * x;
    out[0] = lin + quad;
    out[1] = A * th[2] * dF + quad;
    out[2] = A * (F + th[2] * dF) - 2.0 * lin - quad;
    return c0 + c1 * x + c2 * x * x;
  }

 private:
  double alpha_;
  double T_;
};

/// q^psi = psi_sv c2^psi x^2 (a - a^psi)^2 with
/// c1^psi = (1 - alpha b0) b1 e^{psi_c1e (T-t)}, c2^psi = -(alpha/2) b1^2 e^{psi_c2e (T-t)},
/// a^psi = psi_a0 - psi_a1 (1 + c1^psi / (2 c2^psi x)).
class PsiQFamily final : public ActionValueFamily {
 public:
  PsiQFamily(double alpha, double T) : alpha_(alpha), T_(T) {
    if (!(alpha > 0.0)) throw InvalidArgument("psi family: alpha must be > 0");
  }

  std::vector<std::string> parameter_names() const override {
    return {"psi_a0", "psi_a1", "psi_sv", "psi_c1e", "psi_c2e"};
  }

  struct Parts {
    double tau;
    double x;
    double c1;
    double c2;
    double ratio;  // c1 / (2 c2 x)
    double argmax;
  };

  Parts parts(std::span<const double> ps, const AugmentedPoint& p) const {
    detail::check_b1(p.b1);
    const double x = p.x[0];
    if (x == 0.0) throw NumericDomainError("psi family: a^psi is singular at x = 0");
    const double tau = T_ - p.t;
    const double c1 = (1.0 - alpha_ * p.b0) * p.b1 * std::exp(ps[3] * tau);
    const double c2 = -0.5 * alpha_ * p.b1 * p.b1 * std::exp(ps[4] * tau);
    const double ratio = c1 / (2.0 * c2 * x);
    return {tau, x, c1, c2, ratio, ps[0] - ps[1] * (1.0 + ratio)};
  }

  double value(std::span<const double> ps, const AugmentedPoint& p, double a) const override {
    const auto q = parts(ps, p);
    const double d = a - q.argmax;
    return ps[2] * q.c2 * q.x * q.x * d * d;
  }

  void gradient(std::span<const double> ps, const AugmentedPoint& p, double a,
                std::span<double> out) const override {
    value_and_gradient(ps, p, a, out);
  }

  double value_and_gradient(std::span<const double> ps, const AugmentedPoint& p, double a,
                            std::span<double> out) const override {
    const auto q = parts(ps, p);
    const double d = a - q.argmax;
    const double k = q.c2 * q.x * q.x;
    const double cross = ps[2] * ps[1] * q.tau * q.c1 * q.x * d;
    out[0] = -2.0 * ps[2] * k * d;
    out[1] = 2.0 * ps[2] * k * d * (1.0 + q.ratio);
    out[2] = k * d * d;
    out[3] = cross;
    out[4] = ps[2] * q.tau * k * d * d - cross;
    return ps[2] * k * d * d;
  }

  std::optional<QuadraticInAction> quadratic(std::span<const double> ps,
                                             const AugmentedPoint& p) const override {
    const auto q = parts(ps, p);
    return QuadraticInAction{ps[2] * q.c2 * q.x * q.x, q.argmax, 0.0};
  }

 private:
  double alpha_;
  double T_;
};

inline std::shared_ptr<const ThetaValueFamily> theta_value_family(double alpha, double T) {
  return std::make_shared<const ThetaValueFamily>(alpha, T);
}

inline std::shared_ptr<const PsiQFamily> psi_q_family(double alpha, double T) {
  return std::make_shared<const PsiQFamily>(alpha, T);
}

struct OptimalParams {
  ThetaParams theta;
  PsiParams psi;
};

inline OptimalParams optimal_params(const MarketParams& m) {
  const auto mc = market_constants(m);
  const double s = m.total_variance();
  return {{mc.Px, mc.Pxx, mc.Pnl},
          {m.sigma2 * m.sigma2 / s, (m.r1 - m.r2) / s, s, mc.Px - 2.0 * mc.Pnl,
           2.0 * (mc.Px + mc.Pxx - mc.Pnl)}};
}

inline const std::array<const char*, 8>& parameter_names() {
  static const std::array<const char*, 8> names{"theta_Px", "theta_Pxx", "theta_Pnl", "psi_a0",
                                                "psi_a1",   "psi_sv",    "psi_c1e",   "psi_c2e"};
  return names;
}

/// Index into the concatenated (theta, psi) vector; throws on unknown names.
inline std::size_t parameter_index(const std::string& name) {
  const auto& names = parameter_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (name == names[i]) return i;
  throw InvalidArgument("unknown portfolio parameter '" + name + "'");
}

/// Deterministic a*(t, x, b0, b1) as an augmented policy.
struct OptimalControlPolicy {
  MarketParams market;

  void operator()(const AugmentedStepContext& c, Rng&, std::span<double> a) const {
    a[0] = optimal_control(c.t, c.x[0], c.b0, c.b1, market);
  }
};

/// Mean-variance statistics of terminal wealth plus their running versions on
/// every grid point.
struct EvaluationResult {
  std::size_t episodes = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double mv_objective = 0.0;
  std::vector<double> times;
  std::vector<double> curve_mean_return;
  std::vector<double> curve_mv;
};

namespace detail {
struct WealthSums {
  std::vector<double> sum;
  std::vector<double> sum_sq;
};
}  // namespace detail

/// Simulates N wealth paths under `policy` (episode i on stream.episode(i)).
/// mean_return = mean(X_T) - x0, std_return uses the sample (N-1) variance,
/// mv_objective = mean(X_T) - (alpha/2) population variance.
template <Policy P>
EvaluationResult evaluate_policy(const P& policy, const MarketParams& m, const TimeGrid& grid,
                                 std::size_t episodes, const RandomStream& stream,
                                 unsigned threads = 1) {
  if (episodes < 2) throw InvalidArgument("evaluate_policy: need at least two episodes");
  const auto sde = wealth_sde(m);
  const std::size_t K = grid.steps();
  const std::vector<double> x0{m.x0};

  const auto blocks = map_blocks<detail::WealthSums>(episodes, threads, [&](std::size_t lo, std::size_t hi) {
    detail::WealthSums s{std::vector<double>(K + 1, 0.0), std::vector<double>(K + 1, 0.0)};
    for (std::size_t i = lo; i < hi; ++i) {
      const Trajectory traj = [&] {
        try {
          return simulate(sde, policy, grid, x0, stream.episode(i));
        } catch (const NumericDomainError& e) {
          throw DivergenceError(e.what(), i);
        }
      }();
      for (std::size_t k = 0; k <= K; ++k) {
        const double r = traj.states(k, 0) - m.x0;
        s.sum[k] += r;
        s.sum_sq[k] += r * r;
      }
    }
    return s;
  });

  std::vector<double> sum(K + 1, 0.0);
  std::vector<double> sum_sq(K + 1, 0.0);
  for (const auto& b : blocks)
    for (std::size_t k = 0; k <= K; ++k) {
      sum[k] += b.sum[k];
      sum_sq[k] += b.sum_sq[k];
    }

  const double n = static_cast<double>(episodes);
  EvaluationResult out;
  out.episodes = episodes;
  out.times.resize(K + 1);
  out.curve_mean_return.resize(K + 1);
  out.curve_mv.resize(K + 1);
  for (std::size_t k = 0; k <= K; ++k) {
    const double mean = sum[k] / n;
    const double var = std::max(0.0, sum_sq[k] / n - mean * mean);
    out.times[k] = grid.time(k);
    out.curve_mean_return[k] = mean;
    out.curve_mv[k] = m.x0 + mean - 0.5 * m.alpha * var;
  }
  const double mean = out.curve_mean_return[K];
  const double var = std::max(0.0, sum_sq[K] / n - mean * mean);
  out.mean_return = mean;
  out.std_return = std::sqrt(var * n / (n - 1.0));
  out.mv_objective = out.curve_mv[K];
  return out;
}

/// Mean and standard error of one component of the episode update at one offset.
struct SweepPoint {
  double offset;
  double value;
  double mean;
  double stderr_mean;

  double z() const { return stderr_mean > 0.0 ? mean / stderr_mean : 0.0; }
};

struct SweepOptions {
  double temperature = 0.05;
  bool normalized_q = false;
  double b0_init = 0.0;
  double b1_init = 1.0;
  unsigned threads = 1;
};

/// Per-episode update for every parameter under the Gibbs policy of psi,
/// without learning. Returned as episodes x 8 (theta then psi).
inline std::vector<std::array<double, 8>> episode_updates(const MarketParams& m,
                                                          const TimeGrid& grid,
                                                          std::span<const double> theta,
                                                          std::span<const double> psi,
                                                          std::size_t episodes,
                                                          const RandomStream& stream,
                                                          const SweepOptions& opt) {
  const auto env = mv_environment(m);
  const auto jfam = theta_value_family(m.alpha, m.T);
  const auto qfam = psi_q_family(m.alpha, m.T);
  const GibbsPolicy policy(qfam, {psi.begin(), psi.end()}, opt.temperature);
  const std::vector<double> x0{m.x0};

  using Block = std::vector<std::array<double, 8>>;
  const auto blocks = map_blocks<Block>(episodes, opt.threads, [&](std::size_t lo, std::size_t hi) {
    Block out;
    out.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) {
      try {
        const auto traj =
            simulate_augmented(env, policy, grid, x0, opt.b0_init, opt.b1_init, stream.episode(i));
        const auto u = episode_update(traj, *jfam, theta, *qfam, psi,
                                      QMode{opt.normalized_q, &policy});
        std::array<double, 8> row{};
        std::copy(u.dtheta.begin(), u.dtheta.end(), row.begin());
        std::copy(u.dpsi.begin(), u.dpsi.end(), row.begin() + 3);
        out.push_back(row);
      } catch (const NumericDomainError& e) {
        throw DivergenceError(e.what(), i);
      }
    }
    return out;
  });
  std::vector<std::array<double, 8>> rows;
  rows.reserve(episodes);
  for (const auto& b : blocks) rows.insert(rows.end(), b.begin(), b.end());
  return rows;
}

/// For each offset, perturb one parameter of (theta*, psi*) and report the
/// mean of its own component of the episode update over N episodes. Every
/// offset reuses the same episode substreams.
inline std::vector<SweepPoint> stability_sweep(const std::string& param,
                                               std::span<const double> offsets,
                                               const MarketParams& m, const TimeGrid& grid,
                                               std::size_t episodes, const RandomStream& stream,
                                               const SweepOptions& opt = {}) {
  if (episodes < 2) throw InvalidArgument("stability_sweep: need at least two episodes");
  const std::size_t id = parameter_index(param);
  const auto star = optimal_params(m);
  std::vector<SweepPoint> out;
  for (double off : offsets) {
    auto theta = star.theta.vec();
    auto psi = star.psi.vec();
    double& target = id < 3 ? theta[id] : psi[id - 3];
    target += off;
    const double value = target;
    const auto rows = episode_updates(m, grid, theta, psi, episodes, stream, opt);
    Moments mom;
    for (const auto& r : rows) mom.add(r[id]);
    out.push_back({off, value, mom.mean(), mom.standard_error()});
  }
  return out;
}

}  // namespace ctrsq::portfolio
