#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctrsq/augmentation.hpp"
#include "ctrsq/error.hpp"

namespace ctrsq {

/// q(a) = peak + curvature * (a - argmax)^2 over a scalar action.
struct QuadraticInAction {
  double curvature;
  double argmax;
  double peak = 0.0;
};

/// Parametric J(t, x, b0, b1; theta). Parameters are passed in, never stored,
/// so one family object serves every iterate of a training run.
class ValueFamily {
 public:
  virtual ~ValueFamily() = default;

  virtual std::vector<std::string> parameter_names() const = 0;
  virtual double value(std::span<const double> params, const AugmentedPoint& p) const = 0;
  virtual void gradient(std::span<const double> params, const AugmentedPoint& p,
                        std::span<double> out) const = 0;

  /// Value and gradient in one pass; override when they share work.
  virtual double value_and_gradient(std::span<const double> params, const AugmentedPoint& p,
                                    std::span<double> out) const {
    gradient(params, p, out);
    return value(params, p);
  }

  std::size_t size() const { return parameter_names().size(); }
};

/// Parametric q(t, x, b0, b1, a; psi) over a scalar action.
class ActionValueFamily {
 public:
  virtual ~ActionValueFamily() = default;

  virtual std::vector<std::string> parameter_names() const = 0;
  virtual double value(std::span<const double> params, const AugmentedPoint& p,
                       double a) const = 0;
  virtual void gradient(std::span<const double> params, const AugmentedPoint& p, double a,
                        std::span<double> out) const = 0;

  virtual double value_and_gradient(std::span<const double> params, const AugmentedPoint& p,
                                    double a, std::span<double> out) const {
    gradient(params, p, a, out);
    return value(params, p, a);
  }

  /// Declared quadratic structure in a, if any. Never inferred numerically.
  virtual std::optional<QuadraticInAction> quadratic(std::span<const double> params,
                                                     const AugmentedPoint& p) const {
    (void)params;
    (void)p;
    return std::nullopt;
  }

  std::size_t size() const { return parameter_names().size(); }
};

using ValueFamilyPtr = std::shared_ptr<const ValueFamily>;
using ActionValueFamilyPtr = std::shared_ptr<const ActionValueFamily>;

/// Value family assembled from callables; handy for tests and small models.
class LambdaValueFamily final : public ValueFamily {
 public:
  using ValueFn = std::function<double(std::span<const double>, const AugmentedPoint&)>;
  using GradFn =
      std::function<void(std::span<const double>, const AugmentedPoint&, std::span<double>)>;

  LambdaValueFamily(std::vector<std::string> names, ValueFn value, GradFn grad)
      : names_(std::move(names)), value_(std::move(value)), grad_(std::move(grad)) {}

  std::vector<std::string> parameter_names() const override { return names_; }
  double value(std::span<const double> params, const AugmentedPoint& p) const override {
    return value_(params, p);
  }
  void gradient(std::span<const double> params, const AugmentedPoint& p,
                std::span<double> out) const override {
    grad_(params, p, out);
  }

 private:
  std::vector<std::string> names_;
  ValueFn value_;
  GradFn grad_;
};

class LambdaActionValueFamily final : public ActionValueFamily {
 public:
  using ValueFn = std::function<double(std::span<const double>, const AugmentedPoint&, double)>;
  using GradFn = std::function<void(std::span<const double>, const AugmentedPoint&, double,
                                    std::span<double>)>;
  using QuadFn = std::function<std::optional<QuadraticInAction>(std::span<const double>,
                                                                const AugmentedPoint&)>;

  LambdaActionValueFamily(std::vector<std::string> names, ValueFn value, GradFn grad,
                          QuadFn quad = {})
      : names_(std::move(names)),
        value_(std::move(value)),
        grad_(std::move(grad)),
        quad_(std::move(quad)) {}

  std::vector<std::string> parameter_names() const override { return names_; }
  double value(std::span<const double> params, const AugmentedPoint& p, double a) const override {
    return value_(params, p, a);
  }
  void gradient(std::span<const double> params, const AugmentedPoint& p, double a,
                std::span<double> out) const override {
    grad_(params, p, a, out);
  }
  std::optional<QuadraticInAction> quadratic(std::span<const double> params,
                                             const AugmentedPoint& p) const override {
    if (!quad_) return std::nullopt;
    return quad_(params, p);
  }

 private:
  std::vector<std::string> names_;
  ValueFn value_;
  GradFn grad_;
  QuadFn quad_;
};

}  // namespace ctrsq
