#pragma once

// Frequentist fits: gamma GLM maximum likelihood, maximum likelihood for the
// log-Pareto-tailed model, and the simplified clipped-residual M-estimator
// (unit weights, no Fisher-consistency correction).

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "rhglm/dataset.hpp"
#include "rhglm/likelihood.hpp"
#include "rhglm/optim.hpp"
#include "rhglm/robust_density.hpp"
#include "rhglm/special_fns.hpp"

namespace rhglm {

enum class FitMethod { GammaMLE, RobustMLE, Cantoni };

inline std::string_view to_string(FitMethod m) {
  switch (m) {
    case FitMethod::GammaMLE: return "gamma";
    case FitMethod::RobustMLE: return "robust";
    case FitMethod::Cantoni: return "cantoni";
  }
  return "unknown";
}

inline constexpr double kNuMin = 1e-4;
inline constexpr double kNuMax = 1e6;

struct FitResult {
  FitMethod method = FitMethod::GammaMLE;
  RobustGammaParams params;  // c is meaningful for RobustMLE and Cantoni only
  double log_likelihood = -std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;
  // projected gradient infinity-norm; for Cantoni the estimating-equation norm
  double gradient_norm = std::numeric_limits<double>::infinity();
  double tolerance = 1e-8;
  // nu was stopped by its guard interval [kNuMin, kNuMax]
  bool at_boundary = false;
  // robust fit certified by a derivative-free check at a gradient discontinuity
  bool at_kink = false;
  std::string status;

  bool operator==(const FitResult&) const = default;
};

inline bool operator==(const RobustGammaParams& a, const RobustGammaParams& b) {
  return a.beta == b.beta && a.nu == b.nu && a.c == b.c;
}

struct FitOptions {
  double grad_tol = 1e-8;
  int max_iterations = 500;
};

namespace detail {

inline optim::Bounds theta_bounds(Eigen::Index p) {
  optim::Bounds b = optim::Bounds::unbounded(p + 1);
  b.lower[p] = std::log(kNuMin);
  b.upper[p] = std::log(kNuMax);
  return b;
}

// Negative log-likelihood; evaluation failures (overflowing predictors) are
// reported as +inf so the line search backs off.
inline optim::Objective negative_loglik(Model model, const Dataset& data, double c) {
  return [model, &data, c](const Eigen::VectorXd& theta, Eigen::VectorXd* grad) {
    try {
      const LogLikEval e = model_loglik(model, data, theta, c, grad);
      if (grad) *grad = -*grad;
      return -e.value;
    } catch (const OverflowError&) {
      return std::numeric_limits<double>::infinity();
    } catch (const DomainError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
}

// OLS of log y on X, then method of moments for nu.
inline Eigen::VectorXd gamma_start(const Dataset& data) {
  const Eigen::VectorXd log_y = data.y.array().log();
  Eigen::VectorXd beta = data.x.colPivHouseholderQr().solve(log_y);
  const Eigen::VectorXd rel = (data.y.array() / (data.x * beta).array().exp() - 1.0).matrix();
  const double var = rel.squaredNorm() / static_cast<double>(data.n());
  double nu = var > 0.0 ? 1.0 / var : kNuMax;
  nu = std::clamp(nu, kNuMin, kNuMax);
  Eigen::VectorXd theta(data.p() + 1);
  theta << beta, std::log(nu);
  return theta;
}

// Exact gamma GLM optimum from a nearby point: the beta score
// nu * sum (z_i - 1) x_i does not involve nu, so beta solves a convex
// problem by Newton, after which nu solves log nu - digamma(nu) = s.
inline Eigen::VectorXd gamma_newton_refine(const Dataset& data, Eigen::VectorXd theta) {
  const Eigen::Index p = data.p();
  Eigen::VectorXd beta = theta.head(p);
  auto loss = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = data.x * b;
    return (data.y.array() * (-eta.array()).exp() + eta.array()).sum();
  };
  double current = loss(beta);
  for (int it = 0; it < 100; ++it) {
    const Eigen::ArrayXd z = data.y.array() * (-(data.x * beta).array()).exp();
    const Eigen::VectorXd grad = data.x.transpose() * (1.0 - z).matrix();
    const Eigen::MatrixXd hess = data.x.transpose() * z.matrix().asDiagonal() * data.x;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      const Eigen::VectorXd trial = beta - t * step;
      const double v = loss(trial);
      if (std::isfinite(v) && v <= current) {
        moved = (trial - beta).lpNorm<Eigen::Infinity>() > 0.0;
        beta = trial;
        current = v;
        break;
      }
    }
    if (!moved || step.lpNorm<Eigen::Infinity>() <= 1e-15 * (1.0 + beta.lpNorm<Eigen::Infinity>())) break;
  }
  const Eigen::ArrayXd log_z = data.y.array().log() - (data.x * beta).array();
  const double s = -(log_z - log_z.exp() + 1.0).mean();
  double eta = std::log(kNuMax);
  if (s > 0.0) {
    // h(eta) = eta - digamma(e^eta) - s is decreasing in eta
    double lo = std::log(kNuMin), hi = std::log(kNuMax);
    auto h = [&](double e) { return e - digamma(std::exp(e)) - s; };
    if (h(hi) >= 0.0) {
      eta = hi;
    } else if (h(lo) <= 0.0) {
      eta = lo;
    } else {
      eta = std::clamp(theta[p], lo, hi);
      for (int it = 0; it < 200; ++it) {
        const double v = h(eta);
        if (v > 0.0) lo = eta; else hi = eta;
        const double nu = std::exp(eta);
        const double slope = 1.0 - nu * trigamma(nu);
        double next = eta - v / slope;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - eta) <= 1e-15 * (1.0 + std::abs(eta))) {
          eta = next;
          break;
        }
        eta = next;
      }
    }
  }
  theta.head(p) = beta;
  theta[p] = eta;
  return theta;
}

inline FitResult to_fit_result(FitMethod method, const optim::Result& r, Eigen::Index p, double c,
                               double tol) {
  FitResult out;
  out.method = method;
  out.params.beta = r.x.head(p);
  out.params.nu = std::exp(r.x[p]);
  out.params.c = c;
  out.log_likelihood = -r.f;
  out.iterations = r.iterations;
  out.gradient_norm = r.projected_grad_norm;
  out.tolerance = tol;
  out.converged = r.converged();
  out.at_boundary = r.x[p] <= std::log(kNuMin) || r.x[p] >= std::log(kNuMax);
  out.status = optim::to_string(r.status);
  return out;
}

}  // namespace detail

/// Gamma GLM maximum likelihood over (beta, eta = log nu).
inline FitResult fit_gamma_mle(const Dataset& data, const FitOptions& opt = {}) {
  data.validate();
  const auto objective = detail::negative_loglik(Model::Gamma, data, 0.0);
  const auto bounds = detail::theta_bounds(data.p());
  optim::Result r = optim::minimize_lbfgs(objective, detail::gamma_start(data), bounds,
                                          {opt.grad_tol, opt.max_iterations, 8});
  if (!r.converged() && std::isfinite(r.f)) {
    const Eigen::VectorXd refined = detail::gamma_newton_refine(data, r.x);
    Eigen::VectorXd g(refined.size());
    const double f = objective(refined, &g);
    if (f <= r.f + 1e-9 * (1.0 + std::abs(r.f)) && g.allFinite()) {
      r.x = refined;
      r.f = f;
      r.grad = g;
      r.projected_grad_norm = optim::projected_gradient(refined, g, bounds).lpNorm<Eigen::Infinity>();
      if (r.projected_grad_norm <= opt.grad_tol) r.status = optim::Status::Converged;
    }
  }
  FitResult out = detail::to_fit_result(FitMethod::GammaMLE, r, data.p(), 0.0, opt.grad_tol);
  out.params.c = 0.0;
  if (out.at_boundary && out.converged) out.status = "converged_at_nu_bound";
  return out;
}

/// Maximum likelihood for the log-Pareto-tailed model with fixed c. Starts at
/// the gamma GLM fit (or at `start` when given).
inline FitResult fit_robust_mle(const Dataset& data, double c, const FitOptions& opt = {},
                                const std::optional<Eigen::VectorXd>& start = std::nullopt) {
  data.validate();
  detail::require(c > 0.0 && std::isfinite(c), "fit_robust_mle: c must be positive");
  const auto objective = detail::negative_loglik(Model::Robust, data, c);
  const auto bounds = detail::theta_bounds(data.p());

  Eigen::VectorXd theta0;
  if (start) {
    theta0 = *start;
  } else {
    const FitResult g = fit_gamma_mle(data, opt);
    theta0.resize(data.p() + 1);
    theta0 << g.params.beta, std::log(g.params.nu);
  }
  const optim::LbfgsOptions lopt{opt.grad_tol, opt.max_iterations, 8};
  optim::Result r = optim::minimize_lbfgs(objective, theta0, bounds, lopt);
  int iterations = r.iterations;
  bool kink = false;
  if (!r.converged()) {
    // the objective is continuous but its gradient jumps where an observation
    // crosses a switch point; a simplex pass moves off the kink, a second
    // quasi-Newton pass refines, and a compass check certifies the result
    optim::Result polished = optim::minimize_nelder_mead(objective, r.x, bounds);
    if (polished.f < r.f) r = std::move(polished);
    optim::Result again = optim::minimize_lbfgs(objective, r.x, bounds, lopt);
    iterations += r.iterations + again.iterations;
    if (again.f <= r.f) r = std::move(again);
    if (!r.converged() && optim::compass_certified(objective, r.x, r.f, bounds)) kink = true;
  }
  FitResult out = detail::to_fit_result(FitMethod::RobustMLE, r, data.p(), c, opt.grad_tol);
  out.iterations = iterations;
  if (kink) {
    out.converged = true;
    out.at_kink = true;
    out.status = "converged_at_kink";
  } else if (out.at_boundary && out.converged) {
    out.status = "converged_at_nu_bound";
  }
  return out;
}

/// Pearson residuals sqrt(nu) (y_i - mu_i) / mu_i.
inline Eigen::VectorXd pearson_residuals(const Dataset& data, const Eigen::Ref<const Eigen::VectorXd>& beta,
                                         double nu) {
  detail::require(nu > 0.0, "pearson_residuals: nu must be positive");
  const Eigen::VectorXd mu = (data.x * beta).array().exp();
  return (std::sqrt(nu) * (data.y - mu).array() / mu.array()).matrix();
}

// ---------------------------------------------------------------------------
// Clipped-residual M-estimator.

struct CantoniNu {
  enum class Mode { Estimate, Fixed } mode = Mode::Estimate;
  double value = 0.0;

  static CantoniNu estimate() { return {}; }
  static CantoniNu fixed(double nu) { return {Mode::Fixed, nu}; }
};

struct CantoniOptions {
  double tol = 1e-9;
  int max_outer = 200;
  int max_newton = 100;
};

namespace detail {

// E[psi_c(Z)^2] for Z standard normal and the clipping function psi_c.
inline double huber_kappa(double c) {
  const double phi = std::exp(-0.5 * c * c) / std::sqrt(2.0 * std::numbers::pi);
  const double tail = 1.0 - normal_cdf(c);
  return (1.0 - 2.0 * tail) - 2.0 * c * phi + 2.0 * c * c * tail;
}

// Sum of the clipped estimating function; also the negative gradient in beta
// of the convex loss sum_i [-log g(y_i/mu_i) + log mu_i].
struct CantoniEval {
  double loss = 0.0;
  Eigen::VectorXd psi_sum;
  Eigen::MatrixXd hessian;  // of the loss
};

inline CantoniEval cantoni_eval(const Dataset& data, const Eigen::VectorXd& beta, double nu, double c) {
  const CantoniShape shape = cantoni_shape(nu, c);
  const double k = c * std::sqrt(nu);
  CantoniEval e;
  e.psi_sum.setZero(data.p());
  e.hessian.setZero(data.p(), data.p());
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const Eigen::VectorXd xi = data.x.row(i).transpose();
    const double log_mu = linear_predictor(xi, beta);
    const double log_z = std::log(data.y[i]) - log_mu;
    e.loss += -log_cantoni_g(log_z, shape) + log_mu;
    const double r = std::sqrt(nu) * std::expm1(log_z);
    if (std::abs(r) <= c) {
      const double z = std::exp(log_z);
      e.psi_sum += nu * (z - 1.0) * xi;
      e.hessian += nu * z * xi * xi.transpose();
    } else {
      e.psi_sum += (r > 0.0 ? k : -k) * xi;
    }
  }
  return e;
}

// Proposal 2 scale of the relative residuals (y - mu) / mu, returned
// as nu = 1 / scale^2.
inline double proposal2_nu(const Dataset& data, const Eigen::VectorXd& beta, double c, double nu0) {
  const Eigen::VectorXd rel = (data.y.array() / (data.x * beta).array().exp() - 1.0).matrix();
  const double target = static_cast<double>(data.n() - data.p()) * huber_kappa(c);
  double sigma = 1.0 / std::sqrt(nu0);
  for (int it = 0; it < 500; ++it) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < rel.size(); ++i) {
      const double u = std::clamp(rel[i] / sigma, -c, c);
      sum += u * u;
    }
    const double next = sigma * std::sqrt(sum / target);
    if (!(next > 0.0) || !std::isfinite(next)) return next > 0.0 ? kNuMin : kNuMax;
    const bool done = std::abs(next - sigma) <= 1e-13 * sigma;
    sigma = next;
    if (done) break;
  }
  return std::clamp(1.0 / (sigma * sigma), kNuMin, kNuMax);
}

}  // namespace detail

/// Solves sum_i Psi(y_i, x_i, beta, nu) = 0 by damped Newton on the convex
/// loss whose beta-gradient is -Psi. nu is either held fixed or re-estimated
/// by Proposal 2 after every beta update.
inline FitResult fit_cantoni(const Dataset& data, double c, CantoniNu nu_mode = CantoniNu::estimate(),
                             const CantoniOptions& opt = {}) {
  data.validate();
  detail::require(c > 0.0 && std::isfinite(c), "fit_cantoni: c must be positive");
  const bool fixed = nu_mode.mode == CantoniNu::Mode::Fixed;
  if (fixed) detail::require(nu_mode.value > 0.0, "fit_cantoni: fixed nu must be positive");

  const FitResult start = fit_gamma_mle(data);
  Eigen::VectorXd beta = start.params.beta;
  double nu = fixed ? nu_mode.value : std::clamp(start.params.nu, kNuMin, kNuMax);
  const Eigen::MatrixXd xtx = data.x.transpose() * data.x;

  FitResult out;
  out.method = FitMethod::Cantoni;
  out.params.c = c;
  out.tolerance = opt.tol;
  int total = 0;
  bool converged = false;
  for (int outer = 0; outer < opt.max_outer && !converged; ++outer) {
    const Eigen::VectorXd beta_prev = beta;
    detail::CantoniEval e = detail::cantoni_eval(data, beta, nu, c);
    const double scale = std::max(1.0, nu);
    for (int it = 0; it < opt.max_newton; ++it, ++total) {
      if (e.psi_sum.lpNorm<Eigen::Infinity>() <= opt.tol * scale) break;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(e.hessian);
      Eigen::VectorXd step;
      const double min_pivot = ldlt.vectorD().minCoeff();
      if (ldlt.info() == Eigen::Success && min_pivot > 1e-10 * ldlt.vectorD().maxCoeff()) {
        step = ldlt.solve(e.psi_sum);
      } else {
        // too few unclipped residuals for a Newton step: fixed-point update
        step = xtx.ldlt().solve(e.psi_sum) / nu;
      }
      double t = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
        const Eigen::VectorXd trial = beta + t * step;
        try {
          detail::CantoniEval et = detail::cantoni_eval(data, trial, nu, c);
          if (et.loss <= e.loss - 1e-4 * t * e.psi_sum.dot(step)) {
            beta = trial;
            e = std::move(et);
            moved = true;
            break;
          }
        } catch (const OverflowError&) {
        }
      }
      if (!moved) break;
    }
    if (fixed) {
      converged = e.psi_sum.lpNorm<Eigen::Infinity>() <= opt.tol * scale;
      break;
    }
    const double nu_next = detail::proposal2_nu(data, beta, c, nu);
    const double dnu = std::abs(std::log(nu_next) - std::log(nu));
    nu = nu_next;
    const double dbeta = (beta - beta_prev).lpNorm<Eigen::Infinity>();
    const detail::CantoniEval check = detail::cantoni_eval(data, beta, nu, c);
    converged = dnu <= 1e-10 && dbeta <= 1e-10 &&
                check.psi_sum.lpNorm<Eigen::Infinity>() <= opt.tol * std::max(1.0, nu);
  }
  const detail::CantoniEval final_eval = detail::cantoni_eval(data, beta, nu, c);
  out.params.beta = beta;
  out.params.nu = nu;
  out.gradient_norm = final_eval.psi_sum.lpNorm<Eigen::Infinity>();
  out.iterations = total;
  out.converged = converged;
  out.at_boundary = nu <= kNuMin || nu >= kNuMax;
  Eigen::VectorXd theta(data.p() + 1);
  theta << beta, std::log(nu);
  out.log_likelihood = model_loglik(Model::Gamma, data, theta, 0.0).value;
  out.tolerance = opt.tol * std::max(1.0, nu);
  out.status = converged ? "converged" : "max_iterations";
  return out;
}

}  // namespace rhglm
