#pragma once

#include <functional>

namespace fiekit {

/// Scalar comparison function s -> alpha(s) used for stage costs and gains.
///
/// Quadratic (a s^2) and power (a s^p, p >= 1) kinds are class-K-infinity for
/// a > 0. Custom maps are taken as given; use is_class_k_sampled to screen them.
class KFunction {
 public:
  enum class Kind { Quadratic, Power, Custom };

  static KFunction quadratic(double scale);
  static KFunction power(double scale, double exponent);
  static KFunction identity() { return power(1.0, 1.0); }
  /// `derivative` is optional; central differences are used when absent.
  static KFunction custom(std::function<double(double)> fn,
                          std::function<double(double)> derivative = {});

  double operator()(double s) const;
  double derivative(double s) const;

  Kind kind() const { return kind_; }
  double scale() const { return scale_; }
  double exponent() const { return exponent_; }

 private:
  KFunction() = default;

  Kind kind_ = Kind::Quadratic;
  double scale_ = 1.0;
  double exponent_ = 2.0;
  std::function<double(double)> fn_;
  std::function<double(double)> derivative_;
};

/// alpha(0) == 0 and strictly increasing over `points` log-spaced samples in
/// [1e-6, 1e6].
bool is_class_k_sampled(const KFunction& alpha, int points = 100);

}  // namespace fiekit
