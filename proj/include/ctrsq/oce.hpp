#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctrsq/error.hpp"
#include "ctrsq/scalar_opt.hpp"

namespace ctrsq {

/// Concave utility phi defining the risk measure OCE_phi(W) = sup_eta { eta + E[phi(W - eta)] }.
class UtilityFunction {
 public:
  enum class Kind {
    linear,
    exponential,
    power,
    logarithm,
    cvar,
    mean_variance,
    monotone_mean_variance,
    custom,
  };

  static UtilityFunction linear() { return UtilityFunction(Kind::linear, 0.0); }

  static UtilityFunction exponential(double alpha) {
    if (!(alpha > 0.0)) throw InvalidArgument("exponential utility: alpha must be > 0");
    return UtilityFunction(Kind::exponential, alpha);
  }

  static UtilityFunction power(double gamma) {
    if (!(gamma > 0.0 && gamma < 1.0))
      throw InvalidArgument("power utility: gamma must lie in (0, 1)");
    return UtilityFunction(Kind::power, gamma);
  }

  static UtilityFunction logarithm() { return UtilityFunction(Kind::logarithm, 0.0); }

  static UtilityFunction cvar(double beta) {
    if (!(beta > 0.0 && beta <= 1.0)) throw InvalidArgument("cvar utility: beta must lie in (0, 1]");
    return UtilityFunction(Kind::cvar, beta);
  }

  static UtilityFunction mean_variance(double beta) {
    if (!(beta > 0.0)) throw InvalidArgument("mean-variance utility: beta must be > 0");
    return UtilityFunction(Kind::mean_variance, beta);
  }

  static UtilityFunction monotone_mean_variance(double beta) {
    if (!(beta > 0.0)) throw InvalidArgument("monotone mean-variance utility: beta must be > 0");
    return UtilityFunction(Kind::monotone_mean_variance, beta);
  }

  /// User-supplied phi on [lo, hi]. Concavity is not enforced; oce_estimate
  /// spot-checks it and raises a warning flag.
  static UtilityFunction custom(std::function<double(double)> phi,
                                double lo = -std::numeric_limits<double>::infinity(),
                                double hi = std::numeric_limits<double>::infinity()) {
    if (!phi) throw InvalidArgument("custom utility: empty callable");
    UtilityFunction u(Kind::custom, 0.0, std::move(phi));
    u.lo_ = lo;
    u.hi_ = hi;
    return u;
  }

  /// Parses "linear", "exponential:2", "cvar:0.5", "mean_variance:1", ...
  static UtilityFunction parse(const std::string& spec) {
    const auto colon = spec.find(':');
    const std::string name = spec.substr(0, colon);
    auto param = [&]() {
      if (colon == std::string::npos)
        throw InvalidArgument("utility '" + name + "' needs a parameter, e.g. " + name + ":1");
      try {
        return std::stod(spec.substr(colon + 1));
      } catch (const std::exception&) {
        throw InvalidArgument("utility '" + spec + "': parameter is not a number");
      }
    };
    if (name == "linear") return linear();
    if (name == "exponential") return exponential(param());
    if (name == "power") return power(param());
    if (name == "logarithm" || name == "log") return logarithm();
    if (name == "cvar") return cvar(param());
    if (name == "mean_variance" || name == "mv") return mean_variance(param());
    if (name == "monotone_mean_variance" || name == "mmv") return monotone_mean_variance(param());
    throw InvalidArgument("unknown utility kind '" + name + "'");
  }

  Kind kind() const noexcept { return kind_; }
  double parameter() const noexcept { return param_; }

  std::string name() const {
    switch (kind_) {
      case Kind::linear: return "linear";
      case Kind::exponential: return "exponential";
      case Kind::power: return "power";
      case Kind::logarithm: return "logarithm";
      case Kind::cvar: return "cvar";
      case Kind::mean_variance: return "mean_variance";
      case Kind::monotone_mean_variance: return "monotone_mean_variance";
      case Kind::custom: return "custom";
    }
    return "unknown";
  }

  /// phi(t). Throws NumericDomainError outside the domain.
  double operator()(double t) const {
    if (std::isnan(t)) throw NumericDomainError(name() + " utility evaluated at NaN");
    switch (kind_) {
      case Kind::linear: return t;
      case Kind::exponential: return -std::expm1(-param_ * t) / param_;
      case Kind::power: return power_infimum(param_, t);
      case Kind::logarithm: return log_infimum(t);
      case Kind::cvar: return std::min(0.0, t) / param_;
      case Kind::mean_variance: return t - 0.5 * param_ * t * t;
      case Kind::monotone_mean_variance: {
        const double c = std::min(t, 1.0 / param_);
        return c - 0.5 * param_ * c * c;
      }
      case Kind::custom:
        if (t < lo_ || t > hi_)
          throw NumericDomainError("custom utility evaluated outside [" + std::to_string(lo_) +
                                   ", " + std::to_string(hi_) + "]");
        return custom_(t);
    }
    return t;
  }

  bool has_closed_form() const noexcept {
    return kind_ != Kind::monotone_mean_variance && kind_ != Kind::custom;
  }

  /// phi(t) <= t everywhere on the domain.
  bool dominated_by_identity() const noexcept {
    return kind_ == Kind::exponential || kind_ == Kind::mean_variance || kind_ == Kind::cvar ||
           kind_ == Kind::linear;
  }

 private:
  UtilityFunction(Kind k, double p, std::function<double(double)> c = {})
      : kind_(k), param_(p), custom_(std::move(c)) {
    if (kind_ != Kind::custom) {
      const double at_zero = (*this)(0.0);
      if (std::abs(at_zero) > 1e-12)
        throw InvalidArgument(name() + " utility: phi(0) = " + std::to_string(at_zero) + " != 0");
    }
  }

  // inf over delta > max(0, -t) of g(delta). The objective is searched on a
  // log-spaced bracket by golden section; the open-boundary limits are added
  // analytically because the infimum is typically attained there.
  template <class G, class Lower>
  static double delta_infimum(double t, G&& g, Lower&& lower_limit) {
    const double floor = std::max(0.0, -t);
    const double scale = std::max(1.0, std::abs(t));
    auto objective = [&](double s) {
      const double delta = floor + std::exp(s);
      const double v = g(delta);
      return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };
    const double s_lo = std::log(scale) - 30.0;
    const double s_hi = std::log(scale) + 30.0;
    const auto inner = minimize_unimodal(objective, s_lo, s_hi, 1e-10, 1e3);
    double best = std::min(inner.value, t);  // delta -> infinity gives t
    best = std::min(best, lower_limit());
    return best;
  }

  static double power_infimum(double gamma, double t) {
    if (t == 0.0) return 0.0;
    const double p = 1.0 - gamma;
    return delta_infimum(
        t, [&](double delta) { return delta * std::expm1(p * std::log1p(t / delta)) / p; },
        [&]() { return t >= 0.0 ? 0.0 : t / p; });
  }

  static double log_infimum(double t) {
    if (t < 0.0)
      throw NumericDomainError("logarithm utility: infimum over delta is unbounded below for t < 0");
    if (t == 0.0) return 0.0;
    return delta_infimum(
        t, [&](double delta) { return delta * std::log1p(t / delta); }, []() { return 0.0; });
  }

  Kind kind_;
  double param_;
  std::function<double(double)> custom_;
  double lo_ = -std::numeric_limits<double>::infinity();
  double hi_ = std::numeric_limits<double>::infinity();
};

inline double utility_eval(const UtilityFunction& u, double t) { return u(t); }

struct OceEstimate {
  double value = 0.0;
  double eta_star = 0.0;
  int iterations = 0;
  double bracket_lo = 0.0;
  double bracket_hi = 0.0;
  bool concavity_warning = false;
};

inline constexpr double default_oce_tol = 1e-9;

namespace detail {

inline double sample_mean(std::span<const double> w) {
  return std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
}

inline void check_samples(std::span<const double> w, const char* who) {
  if (w.empty()) throw InvalidArgument(std::string(who) + ": empty sample set");
  for (double v : w)
    if (!std::isfinite(v)) throw InvalidArgument(std::string(who) + ": non-finite sample");
}

// Lower empirical beta-quantile, the left end of the CVaR maximizer set.
inline double empirical_quantile(std::vector<double> sorted, double beta) {
  std::sort(sorted.begin(), sorted.end());
  const double pos = std::ceil(beta * static_cast<double>(sorted.size())) - 1.0;
  const auto idx = static_cast<std::size_t>(
      std::clamp(pos, 0.0, static_cast<double>(sorted.size() - 1)));
  return sorted[idx];
}

inline bool concave_spot_check(const UtilityFunction& u, double lo, double hi) {
  const double span = std::max(hi - lo, 1.0);
  const double h = 1e-3 * span;
  for (int i = 0; i <= 8; ++i) {
    const double x = lo + span * i / 8.0;
    try {
      const double second = u(x - h) + u(x + h) - 2.0 * u(x);
      if (second > 1e-9 * (1.0 + std::abs(u(x)))) return false;
    } catch (const NumericDomainError&) {
      continue;
    }
  }
  return true;
}

}  // namespace detail

/// g(eta) = eta + mean phi(W_i - eta), -inf where phi leaves its domain.
inline double oce_objective(const UtilityFunction& u, std::span<const double> samples, double eta) {
  double acc = 0.0;
  for (double w : samples) {
    try {
      acc += u(w - eta);
    } catch (const NumericDomainError&) {
      return -std::numeric_limits<double>::infinity();
    }
  }
  return eta + acc / static_cast<double>(samples.size());
}

/// Sample-based OCE via the variational program, maximized over eta by bracket
/// expansion from [min W, max W] and golden-section refinement to width tol.
inline OceEstimate oce_estimate(const UtilityFunction& u, std::span<const double> samples,
                                double tol = default_oce_tol) {
  detail::check_samples(samples, "oce_estimate");
  if (!(tol > 0.0)) throw InvalidArgument("oce_estimate: tol must be positive");

  const auto [min_it, max_it] = std::minmax_element(samples.begin(), samples.end());
  const double w_min = *min_it;
  const double w_max = *max_it;
  auto g = [&](double eta) { return oce_objective(u, samples, eta); };

  OceEstimate out;
  if (u.kind() == UtilityFunction::Kind::custom)
    out.concavity_warning = !detail::concave_spot_check(u, w_min - w_max, w_max - w_min);

  const double scale = std::max({1.0, std::abs(w_min), std::abs(w_max)});
  const auto best = maximize_unimodal(g, w_min, w_max, tol, 1e6 * scale);
  out.iterations = best.iterations;
  out.bracket_lo = best.lo;
  out.bracket_hi = best.hi;
  out.eta_star = best.argmax;
  out.value = best.value;

  // Flat objective (linear utility): report the sample mean as the maximizer.
  if (best.spread <= tol * std::max(1.0, std::abs(best.value))) {
    out.eta_star = detail::sample_mean(samples);
    out.value = g(out.eta_star);
    return out;
  }

  if (u.kind() == UtilityFunction::Kind::cvar) {
    const double q = detail::empirical_quantile({samples.begin(), samples.end()}, u.parameter());
    const double gq = g(q);
    if (gq >= out.value) {
      out.eta_star = q;
      out.value = gq;
    }
  }
  return out;
}

/// Plug-in evaluation of the explicit OCE formula on the empirical measure.
inline double oce_closed_form(const UtilityFunction& u, std::span<const double> samples) {
  using Kind = UtilityFunction::Kind;
  detail::check_samples(samples, "oce_closed_form");
  const double n = static_cast<double>(samples.size());
  const double p = u.parameter();
  auto require_positive = [&](const char* who) {
    for (double w : samples)
      if (!(w > 0.0))
        throw NumericDomainError(std::string(who) + " closed form needs positive samples");
  };

  switch (u.kind()) {
    case Kind::linear: return detail::sample_mean(samples);
    case Kind::exponential: {
      double top = -std::numeric_limits<double>::infinity();
      for (double w : samples) top = std::max(top, -p * w);
      double acc = 0.0;
      for (double w : samples) acc += std::exp(-p * w - top);
      return -(top + std::log(acc / n)) / p;
    }
    case Kind::power: {
      require_positive("power");
      const double e = 1.0 - p;
      double acc = 0.0;
      for (double w : samples) acc += std::pow(w, e);
      return std::pow(acc / n, 1.0 / e);
    }
    case Kind::logarithm: {
      require_positive("logarithm");
      double acc = 0.0;
      for (double w : samples) acc += std::log(w);
      return std::exp(acc / n);
    }
    case Kind::cvar: {
      // Expected shortfall with the boundary atom split fractionally.
      std::vector<double> sorted(samples.begin(), samples.end());
      std::sort(sorted.begin(), sorted.end());
      const double mass = p * n;
      const auto whole = static_cast<std::size_t>(std::floor(mass));
      double acc = 0.0;
      for (std::size_t i = 0; i < whole && i < sorted.size(); ++i) acc += sorted[i];
      if (whole < sorted.size()) acc += (mass - static_cast<double>(whole)) * sorted[whole];
      return acc / mass;
    }
    case Kind::mean_variance: {
      const double mean = detail::sample_mean(samples);
      double ss = 0.0;
      for (double w : samples) ss += (w - mean) * (w - mean);
      return mean - 0.5 * p * ss / n;
    }
    case Kind::monotone_mean_variance:
      throw UnsupportedKind("monotone mean-variance OCE has no explicit form");
    case Kind::custom:
      throw UnsupportedKind("custom utility has no explicit OCE formula");
  }
  throw UnsupportedKind("unknown utility kind");
}

}  // namespace ctrsq
