// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

namespace bmoe::act {

inline double relu(double x) noexcept { return x > 0.0 ? x : 0.0; }

/// ln(1 + e^x) without overflow for large |x|.
inline double softplus(double x) noexcept {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// x * tanh(softplus(x)).
inline double mish(double x) noexcept { return x * std::tanh(softplus(x)); }

inline double mish_derivative(double x) noexcept {
  const double t = std::tanh(softplus(x));
  return t + x * (1.0 - t * t) * sigmoid(x);
}

}  // namespace bmoe::act
