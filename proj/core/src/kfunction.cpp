#include "fiekit/kfunction.hpp"

#include <cmath>

#include "fiekit/types.hpp"

namespace fiekit {

KFunction KFunction::quadratic(double scale) {
  if (!(scale > 0.0)) throw InputError("KFunction: quadratic scale must be positive");
  KFunction k;
  k.kind_ = Kind::Quadratic;
  k.scale_ = scale;
  k.exponent_ = 2.0;
  return k;
}

KFunction KFunction::power(double scale, double exponent) {
  if (!(scale > 0.0)) throw InputError("KFunction: power scale must be positive");
  if (!(exponent >= 1.0)) throw InputError("KFunction: power exponent must be >= 1");
  KFunction k;
  k.kind_ = Kind::Power;
  k.scale_ = scale;
  k.exponent_ = exponent;
  return k;
}

KFunction KFunction::custom(std::function<double(double)> fn,
                            std::function<double(double)> derivative) {
  if (!fn) throw InputError("KFunction: custom map is empty");
  KFunction k;
  k.kind_ = Kind::Custom;
  k.fn_ = std::move(fn);
  k.derivative_ = std::move(derivative);
  return k;
}

double KFunction::operator()(double s) const {
  switch (kind_) {
    case Kind::Quadratic:
      return scale_ * s * s;
    case Kind::Power:
      return scale_ * std::pow(s, exponent_);
    case Kind::Custom:
      return fn_(s);
  }
  return 0.0;
}

double KFunction::derivative(double s) const {
  switch (kind_) {
    case Kind::Quadratic:
      return 2.0 * scale_ * s;
    case Kind::Power:
      if (exponent_ == 1.0) return scale_;
      return scale_ * exponent_ * std::pow(s, exponent_ - 1.0);
    case Kind::Custom: {
      if (derivative_) return derivative_(s);
      const double h = 1e-6 * (1.0 + std::abs(s));
      const double lo = std::max(0.0, s - h);
      return (fn_(s + h) - fn_(lo)) / (s + h - lo);
    }
  }
  return 0.0;
}

bool is_class_k_sampled(const KFunction& alpha, int points) {
  if (alpha(0.0) != 0.0) return false;
  double previous = 0.0;
  for (int i = 0; i < points; ++i) {
    const double s = std::pow(10.0, -6.0 + 12.0 * i / std::max(1, points - 1));
    const double v = alpha(s);
    if (!std::isfinite(v) || !(v > previous)) return false;
    previous = v;
  }
  return true;
}

}  // namespace fiekit
