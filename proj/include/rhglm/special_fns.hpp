#pragma once

// Special functions shared by the density, estimation and sampling code.
// The incomplete gamma and error functions are delegated to Boost.Math; the
// gamma(mean 1, shape nu) log-density is evaluated through a Stirling split
// so that it stays accurate for very large shapes.

#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/log1p.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "rhglm/errors.hpp"

namespace rhglm {

inline double log_gamma(double x) {
  detail::require(!std::isnan(x) && x > 0.0, "log_gamma: argument must be positive");
  if (std::isinf(x)) return x;
  return boost::math::lgamma(x);
}

inline double digamma(double x) {
  detail::require(!std::isnan(x) && x > 0.0, "digamma: argument must be positive");
  return boost::math::digamma(x);
}

inline double trigamma(double x) {
  detail::require(!std::isnan(x) && x > 0.0, "trigamma: argument must be positive");
  return boost::math::trigamma(x);
}

/// P(Z <= z) for Z gamma-distributed with the given shape and mean
/// (scale = mean / shape).
inline double gamma_cdf(double z, double shape, double mean) {
  detail::require(shape > 0.0 && mean > 0.0, "gamma_cdf: shape and mean must be positive");
  detail::require(!std::isnan(z) && z >= 0.0, "gamma_cdf: z must be nonnegative");
  if (z == 0.0) return 0.0;
  if (std::isinf(z)) return 1.0;
  return boost::math::gamma_p(shape, z * shape / mean);
}

/// Upper tail P(Z > z), computed directly (no 1 - cdf cancellation).
inline double gamma_sf(double z, double shape, double mean) {
  detail::require(shape > 0.0 && mean > 0.0, "gamma_sf: shape and mean must be positive");
  detail::require(!std::isnan(z) && z >= 0.0, "gamma_sf: z must be nonnegative");
  if (z == 0.0) return 1.0;
  if (std::isinf(z)) return 0.0;
  return boost::math::gamma_q(shape, z * shape / mean);
}

inline double normal_cdf(double x) {
  if (std::isnan(x)) return x;
  return 0.5 * boost::math::erfc(-x / std::numbers::sqrt2);
}

namespace detail {

// lgamma(x) - [(x - 1/2) log x - x + log(2 pi) / 2]
inline double stirling_correction(double x) {
  if (x >= 10.0) {
    const double r = 1.0 / x;
    const double r2 = r * r;
    return r * (1.0 / 12 - r2 * (1.0 / 360 - r2 * (1.0 / 1260 - r2 * (1.0 / 1680 - r2 / 1188))));
  }
  return log_gamma(x) - ((x - 0.5) * std::log(x) - x + 0.5 * std::log(2.0 * std::numbers::pi));
}

// log(z) - z + 1, accurate near z = 1
inline double log_minus_linear(double z) {
  if (std::abs(z - 1.0) < 0.5) return boost::math::log1pmx(z - 1.0);
  return std::log(z) - z + 1.0;
}

}  // namespace detail

/// Log-density of the gamma law with mean 1 and shape nu:
/// nu log nu - log Gamma(nu) + (nu - 1) log z - nu z.
inline double log_gamma_mean1_pdf(double z, double nu) {
  detail::require(nu > 0.0, "log_gamma_mean1_pdf: shape must be positive");
  detail::require(z > 0.0, "log_gamma_mean1_pdf: z must be positive");
  return nu * detail::log_minus_linear(z) - std::log(z) + 0.5 * std::log(nu) -
         0.5 * std::log(2.0 * std::numbers::pi) - detail::stirling_correction(nu);
}

}  // namespace rhglm
