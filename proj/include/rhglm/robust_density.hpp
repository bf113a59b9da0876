#pragma once

// Gamma density with log-Pareto tails.
//
// The central part on [z_l, z_r] is the gamma(mean 1, shape nu) density. Past
// z_r the density continues as f(z_r) (z_r / z) (log z_r / log z)^lambda_r,
// and below z_l (only when nu > 1 and c < sqrt(nu)) as the mirrored form with
// lambda_l. The tail exponents are chosen so that each tail carries exactly the
// gamma mass it replaces, which makes the density integrate to one.
//
// Everything is evaluated in log-space; responses enter through
// log z = log y - x'beta so that extreme outliers never overflow.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include <Eigen/Dense>

#include "rhglm/errors.hpp"
#include "rhglm/special_fns.hpp"

namespace rhglm {

struct RobustGammaParams {
  Eigen::VectorXd beta;
  double nu = 1.0;
  double c = 1.6;

  void validate() const {
    detail::require(nu > 0.0 && std::isfinite(nu), "RobustGammaParams: nu must be positive");
    detail::require(c > 0.0 && std::isfinite(c), "RobustGammaParams: c must be positive");
    detail::require(beta.allFinite(), "RobustGammaParams: beta must be finite");
  }
};

struct TailConstants {
  double nu = 0.0;
  double c = 0.0;
  double z_r = 0.0;
  double log_z_r = 0.0;
  double lambda_r = 0.0;
  double log_f_mid_at_zr = 0.0;
  double f_mid_at_zr = 0.0;
  // z_l == 0 disables the left tail; lambda_l is then empty.
  double z_l = 0.0;
  double log_z_l = -std::numeric_limits<double>::infinity();
  std::optional<double> lambda_l;
  double log_f_mid_at_zl = -std::numeric_limits<double>::infinity();
  double f_mid_at_zl = 0.0;

  bool has_left_tail() const { return z_l > 0.0; }
};

/// Switch points and tail exponents for (nu, c).
inline TailConstants compute_tail_constants(double nu, double c) {
  detail::require(nu > 0.0 && std::isfinite(nu), "compute_tail_constants: nu must be positive");
  detail::require(c > 0.0 && std::isfinite(c), "compute_tail_constants: c must be positive");
  TailConstants t;
  t.nu = nu;
  t.c = c;
  const double offset = c / std::sqrt(nu);
  t.z_r = 1.0 + offset;
  t.log_z_r = std::log1p(offset);
  t.log_f_mid_at_zr = log_gamma_mean1_pdf(t.z_r, nu);
  t.f_mid_at_zr = std::exp(t.log_f_mid_at_zr);
  const double upper_mass = gamma_sf(t.z_r, nu, 1.0);
  if (!(upper_mass > 0.0)) throw DomainError("compute_tail_constants: right tail mass underflows");
  t.lambda_r =
      1.0 + std::exp(t.log_f_mid_at_zr + std::log(t.log_z_r) + t.log_z_r - std::log(upper_mass));

  if (nu > 1.0 && offset < 1.0) {
    t.z_l = 1.0 - offset;
    t.log_z_l = std::log1p(-offset);
    t.log_f_mid_at_zl = log_gamma_mean1_pdf(t.z_l, nu);
    t.f_mid_at_zl = std::exp(t.log_f_mid_at_zl);
    const double lower_mass = gamma_cdf(t.z_l, nu, 1.0);
    if (!(lower_mass > 0.0)) throw DomainError("compute_tail_constants: left tail mass underflows");
    t.lambda_l = 1.0 + std::exp(t.log_f_mid_at_zl + std::log(-t.log_z_l) + t.log_z_l -
                                std::log(lower_mass));
  }
  return t;
}

enum class Region { Left, Mid, Right };

struct DensityEvaluation {
  double value = 0.0;
  double log_value = 0.0;
  Region region = Region::Mid;
};

namespace detail {

inline Region classify_log(double log_z, const TailConstants& t) {
  if (log_z > t.log_z_r) return Region::Right;
  if (t.has_left_tail() && log_z < t.log_z_l) return Region::Left;
  return Region::Mid;
}

// log f(z) given log z; the tails only ever see |log z| bounded away from 0.
inline double log_pdf_from_log(double log_z, const TailConstants& t, Region region) {
  switch (region) {
    case Region::Right:
      return t.log_f_mid_at_zr + t.log_z_r - log_z +
             t.lambda_r * (std::log(t.log_z_r) - std::log(log_z));
    case Region::Left:
      return t.log_f_mid_at_zl + t.log_z_l - log_z +
             *t.lambda_l * (std::log(-t.log_z_l) - std::log(-log_z));
    case Region::Mid:
      break;
  }
  return log_gamma_mean1_pdf(std::exp(log_z), t.nu);
}

}  // namespace detail

inline DensityEvaluation pdf(double z, const TailConstants& t) {
  detail::require(z > 0.0 && !std::isnan(z), "pdf: z must be positive");
  DensityEvaluation e;
  const double log_z = std::log(z);
  // membership of the closed middle interval is decided on z itself
  if (z > t.z_r) {
    e.region = Region::Right;
  } else if (t.has_left_tail() && z < t.z_l) {
    e.region = Region::Left;
  } else {
    e.region = Region::Mid;
  }
  e.log_value = e.region == Region::Mid ? log_gamma_mean1_pdf(z, t.nu)
                                        : detail::log_pdf_from_log(log_z, t, e.region);
  e.value = std::exp(e.log_value);
  return e;
}

inline DensityEvaluation pdf(double z, double nu, double c) {
  return pdf(z, compute_tail_constants(nu, c));
}

namespace detail {

inline double linear_predictor(const Eigen::Ref<const Eigen::VectorXd>& x,
                               const Eigen::Ref<const Eigen::VectorXd>& beta) {
  require(x.size() == beta.size(), "covariate vector and beta differ in length");
  const double eta = x.dot(beta);
  if (!std::isfinite(eta) || std::abs(eta) > std::log(std::numeric_limits<double>::max())) {
    throw OverflowError("linear predictor x'beta is outside the representable range of exp");
  }
  return eta;
}

}  // namespace detail

/// log[ f(y / mu) / mu ] with mu = exp(x'beta).
inline double log_pdf_response(double y, const Eigen::Ref<const Eigen::VectorXd>& x,
                               const Eigen::Ref<const Eigen::VectorXd>& beta,
                               const TailConstants& t) {
  detail::require(y > 0.0 && std::isfinite(y), "log_pdf_response: y must be positive");
  const double log_mu = detail::linear_predictor(x, beta);
  const double log_z = std::log(y) - log_mu;
  const Region region = detail::classify_log(log_z, t);
  return detail::log_pdf_from_log(log_z, t, region) - log_mu;
}

inline double log_pdf_response(double y, const Eigen::Ref<const Eigen::VectorXd>& x,
                               const RobustGammaParams& params) {
  params.validate();
  return log_pdf_response(y, x, params.beta, compute_tail_constants(params.nu, params.c));
}

/// d lambda / d eta (eta = log nu) by central differences.
struct TailSlopes {
  double dlambda_r = 0.0;
  double dlambda_l = 0.0;
};

inline TailSlopes tail_slopes(double eta, double c) {
  const double h = 1e-6 * std::max(1.0, std::abs(eta));
  const TailConstants up = compute_tail_constants(std::exp(eta + h), c);
  const TailConstants down = compute_tail_constants(std::exp(eta - h), c);
  TailSlopes s;
  s.dlambda_r = (up.lambda_r - down.lambda_r) / (2.0 * h);
  if (up.lambda_l && down.lambda_l) s.dlambda_l = (*up.lambda_l - *down.lambda_l) / (2.0 * h);
  return s;
}

struct LogPdfGradient {
  Eigen::VectorXd d_beta;
  double d_eta = 0.0;
  bool at_kink = false;
};

namespace detail {

// d/d(x'beta) and d/d eta of log f(y/mu) - log mu; the beta gradient is the
// first entry times x. psi is digamma(nu).
struct ScoreTerms {
  double d_linear = 0.0;
  double d_eta = 0.0;
  bool at_kink = false;
};

inline ScoreTerms robust_score(double log_z, const TailConstants& t, const TailSlopes& slopes,
                               double psi) {
  const double nu = t.nu;
  const double eta = std::log(nu);
  ScoreTerms s;
  s.at_kink = log_z == t.log_z_r || (t.has_left_tail() && log_z == t.log_z_l);
  switch (classify_log(log_z, t)) {
    case Region::Mid: {
      const double z = std::exp(log_z);
      s.d_linear = nu * (z - 1.0);
      s.d_eta = nu * (-z + log_z + eta + 1.0 - psi);
      break;
    }
    case Region::Right: {
      const double shift = t.c / std::sqrt(nu);  // c e^{-eta/2}
      s.d_linear = t.lambda_r / log_z;
      s.d_eta = -0.5 * t.c * std::sqrt(nu) * (1.0 + 1.0 / t.z_r) + nu * (t.log_z_r + eta - psi) +
                slopes.dlambda_r * (std::log(t.log_z_r) - std::log(log_z)) -
                t.lambda_r / t.log_z_r * shift / (2.0 * t.z_r);
      break;
    }
    case Region::Left: {
      const double shift = t.c / std::sqrt(nu);
      s.d_linear = *t.lambda_l / log_z;
      s.d_eta = 0.5 * t.c * std::sqrt(nu) * (1.0 + 1.0 / t.z_l) + nu * (t.log_z_l + eta - psi) +
                slopes.dlambda_l * (std::log(-t.log_z_l) - std::log(-log_z)) +
                *t.lambda_l / t.log_z_l * shift / (2.0 * t.z_l);
      break;
    }
  }
  return s;
}

}  // namespace detail

/// Gradient of log_pdf_response with respect to (beta, eta = log nu). Needs
/// the tail constants at nu and the tail slopes at eta. Exactly at a switch
/// point the middle-branch gradient is returned and at_kink is set.
inline LogPdfGradient grad_log_pdf(double y, const Eigen::Ref<const Eigen::VectorXd>& x,
                                   const Eigen::Ref<const Eigen::VectorXd>& beta,
                                   const TailConstants& t, const TailSlopes& slopes) {
  detail::require(y > 0.0 && std::isfinite(y), "grad_log_pdf: y must be positive");
  const double log_z = std::log(y) - detail::linear_predictor(x, beta);
  const detail::ScoreTerms s = detail::robust_score(log_z, t, slopes, digamma(t.nu));
  LogPdfGradient g;
  g.d_beta = s.d_linear * x;
  g.d_eta = s.d_eta;
  g.at_kink = s.at_kink;
  return g;
}

inline LogPdfGradient grad_log_pdf(double y, const Eigen::Ref<const Eigen::VectorXd>& x,
                                   const RobustGammaParams& params) {
  params.validate();
  return grad_log_pdf(y, x, params.beta, compute_tail_constants(params.nu, params.c),
                      tail_slopes(std::log(params.nu), params.c));
}

/// Per-observation gamma GLM log-likelihood with log link.
inline double gamma_glm_log_pdf(double y, const Eigen::Ref<const Eigen::VectorXd>& x,
                                const Eigen::Ref<const Eigen::VectorXd>& beta, double nu) {
  detail::require(y > 0.0 && std::isfinite(y), "gamma_glm_log_pdf: y must be positive");
  detail::require(nu > 0.0 && std::isfinite(nu), "gamma_glm_log_pdf: nu must be positive");
  const double log_mu = detail::linear_predictor(x, beta);
  const double log_z = std::log(y) - log_mu;
  return nu * (log_z - std::exp(log_z)) - log_z + nu * std::log(nu) - log_gamma(nu) - log_mu;
}

// ---------------------------------------------------------------------------
// Unnormalized density implied by the clipped-residual
// estimating equation: gamma core for |sqrt(nu)(z - 1)| <= c, power tails
// z^{-c sqrt(nu) - 1} and z^{c sqrt(nu) - 1} outside, glued continuously.

struct CantoniShape {
  double nu = 0.0;
  double c = 0.0;
  double z_hi = 0.0;
  double z_lo = 0.0;  // 0 disables the lower power branch
  double log_a1 = 0.0;
  double log_a2 = 0.0;
};

inline CantoniShape cantoni_shape(double nu, double c) {
  detail::require(nu > 0.0 && std::isfinite(nu), "cantoni_g: nu must be positive");
  detail::require(c > 0.0 && std::isfinite(c), "cantoni_g: c must be positive");
  CantoniShape s;
  s.nu = nu;
  s.c = c;
  const double offset = c / std::sqrt(nu);
  const double k = c * std::sqrt(nu);
  s.z_hi = 1.0 + offset;
  s.log_a1 = -log_gamma_mean1_pdf(s.z_hi, nu) - (k + 1.0) * std::log1p(offset);
  if (offset < 1.0) {
    s.z_lo = 1.0 - offset;
    s.log_a2 = (k - 1.0) * std::log1p(-offset) - log_gamma_mean1_pdf(s.z_lo, nu);
  }
  return s;
}

inline double log_cantoni_g(double log_z, const CantoniShape& s) {
  const double k = s.c * std::sqrt(s.nu);
  if (log_z > std::log1p(s.c / std::sqrt(s.nu))) return (-k - 1.0) * log_z - s.log_a1;
  if (s.z_lo > 0.0 && log_z < std::log1p(-s.c / std::sqrt(s.nu))) return (k - 1.0) * log_z - s.log_a2;
  return log_gamma_mean1_pdf(std::exp(log_z), s.nu);
}

inline double cantoni_g(double z, double nu, double c) {
  detail::require(z > 0.0 && !std::isnan(z), "cantoni_g: z must be positive");
  return std::exp(log_cantoni_g(std::log(z), cantoni_shape(nu, c)));
}

}  // namespace rhglm
