#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ctrsq/error.hpp"

namespace ctrsq {

struct ScalarMaximum {
  double argmax = 0.0;
  double value = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  double lo = 0.0;  // bracket that contained the maximizer
  double hi = 0.0;
  double spread = 0.0;  // max - min of f over the bracket's three probe points
};

/// Maximizes a unimodal f: widens [lo, hi] outward (doubling the step) until
/// the midpoint dominates both ends, then golden-section refines the bracket
/// to width tol. Values of -inf are allowed and read as "outside the domain".
template <class F>
ScalarMaximum maximize_unimodal(F&& f, double lo, double hi, double tol,
                                double max_abs = 1e6, int max_iterations = 10000) {
  if (!(tol > 0.0)) throw InvalidArgument("maximize_unimodal: tol must be positive");
  if (lo > hi) std::swap(lo, hi);
  if (hi - lo < tol) {
    const double pad = std::max(tol, 1e-3 * std::max({1.0, std::abs(lo), std::abs(hi)}));
    lo -= pad;
    hi += pad;
  }

  ScalarMaximum out;
  double a = lo;
  double b = hi;
  double m = 0.5 * (a + b);
  double fa = f(a);
  double fb = f(b);
  double fm = f(m);
  out.iterations = 3;

  auto guard = [&](double v) {
    if (std::abs(v) > max_abs)
      throw UnboundedObjective("maximize_unimodal: bracket expansion exceeded |x| = " +
                               std::to_string(max_abs));
  };

  while (fa > fm) {
    const double width = b - a;
    b = m;
    fb = fm;
    m = a;
    fm = fa;
    a = m - width;
    guard(a);
    fa = f(a);
    ++out.iterations;
  }
  while (fb > fm) {
    const double width = b - a;
    a = m;
    fa = fm;
    m = b;
    fm = fb;
    b = m + width;
    guard(b);
    fb = f(b);
    ++out.iterations;
  }
  out.lo = a;
  out.hi = b;
  {
    const double hi_v = std::max({fa, fm, fb});
    const double lo_v = std::min({fa, fm, fb});
    out.spread = std::isfinite(lo_v) ? hi_v - lo_v : std::numeric_limits<double>::infinity();
  }

  double best_x = m;
  double best_f = fm;
  auto consider = [&](double x, double fx) {
    if (fx > best_f) {
      best_f = fx;
      best_x = x;
    }
  };
  consider(a, fa);
  consider(b, fb);

  constexpr double inv_phi = 0.6180339887498949;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = f(x1);
  double f2 = f(x2);
  out.iterations += 2;
  consider(x1, f1);
  consider(x2, f2);
  while (b - a > tol && out.iterations < max_iterations) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
      consider(x2, f2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
      consider(x1, f1);
    }
    ++out.iterations;
  }
  const double mid = 0.5 * (a + b);
  const double fmid = f(mid);
  ++out.iterations;
  consider(mid, fmid);

  out.argmax = best_x;
  out.value = best_f;
  return out;
}

template <class F>
ScalarMaximum minimize_unimodal(F&& f, double lo, double hi, double tol, double max_abs = 1e6,
                                int max_iterations = 10000) {
  auto r = maximize_unimodal([&](double x) { return -f(x); }, lo, hi, tol, max_abs,
                             max_iterations);
  r.value = -r.value;
  return r;
}

}  // namespace ctrsq
