#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>

namespace ctrsq {

/// Gauss-Hermite rule for weight e^{-x^2}, nodes found by Newton iteration on
/// the orthonormal Hermite recurrence.
template <std::size_t N>
struct GaussHermite {
  std::array<double, N> nodes{};
  std::array<double, N> weights{};

  GaussHermite() {
    const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
    const std::size_t half = (N + 1) / 2;
    double z = 0.0;
    for (std::size_t i = 0; i < half; ++i) {
      const double n = static_cast<double>(N);
      if (i == 0)
        z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
      else if (i == 1)
        z -= 1.14 * std::pow(n, 0.426) / z;
      else if (i == 2)
        z = 1.86 * z - 0.86 * nodes[0];
      else if (i == 3)
        z = 1.91 * z - 0.91 * nodes[1];
      else
        z = 2.0 * z - nodes[i - 2];
      double pp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p1 = pim4;
        double p2 = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
          const double p3 = p2;
          p2 = p1;
          const double jj = static_cast<double>(j);
          p1 = z * std::sqrt(2.0 / (jj + 1.0)) * p2 - std::sqrt(jj / (jj + 1.0)) * p3;
        }
        pp = std::sqrt(2.0 * n) * p2;
        const double z1 = z;
        z = z1 - p1 / pp;
        if (std::abs(z - z1) <= 1e-15) break;
      }
      nodes[i] = z;
      nodes[N - 1 - i] = -z;
      weights[i] = 2.0 / (pp * pp);
      weights[N - 1 - i] = weights[i];
    }
  }

  /// E[f(A)] for A ~ Normal(mean, variance).
  template <class F>
  double expectation(double mean, double variance, F&& f) const {
    const double scale = std::sqrt(2.0 * variance);
    double acc = 0.0;
    for (std::size_t i = 0; i < N; ++i) acc += weights[i] * f(mean + scale * nodes[i]);
    return acc / std::sqrt(std::numbers::pi);
  }
};

inline const GaussHermite<24>& gauss_hermite_24() {
  static const GaussHermite<24> rule;
  return rule;
}

}  // namespace ctrsq
