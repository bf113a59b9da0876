#pragma once

// Dataset-level log-likelihoods in the (beta, eta = log nu) parameterization,
// shared by the optimizers and the posterior code.

#include <cmath>
#include <string_view>

#include <Eigen/Dense>

#include "rhglm/dataset.hpp"
#include "rhglm/robust_density.hpp"
#include "rhglm/special_fns.hpp"

namespace rhglm {

enum class Model { Gamma, Robust };

inline std::string_view to_string(Model m) { return m == Model::Gamma ? "gamma" : "robust"; }

struct LogLikEval {
  double value = 0.0;
  bool at_kink = false;
};

/// Sum over observations of log f(y_i / mu_i) - log mu_i. theta = (beta, eta).
/// When grad is non-null it receives the gradient (length p + 1).
inline LogLikEval model_loglik(Model model, const Dataset& data,
                               const Eigen::Ref<const Eigen::VectorXd>& theta, double c,
                               Eigen::VectorXd* grad = nullptr) {
  const Eigen::Index p = data.p();
  detail::require(theta.size() == p + 1, "model_loglik: theta must have length p + 1");
  const Eigen::VectorXd beta = theta.head(p);
  const double eta = theta[p];
  const double nu = std::exp(eta);
  detail::require(nu > 0.0 && std::isfinite(nu), "model_loglik: nu = exp(eta) out of range");

  LogLikEval out;
  if (grad) grad->setZero(p + 1);
  if (data.n() == 0) return out;
  const double psi = grad ? digamma(nu) : 0.0;

  if (model == Model::Gamma) {
    const double constant = nu * eta - log_gamma(nu);
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      const double log_mu = detail::linear_predictor(data.x.row(i).transpose(), beta);
      const double log_z = std::log(data.y[i]) - log_mu;
      const double z = std::exp(log_z);
      out.value += nu * (log_z - z) - log_z - log_mu + constant;
      if (grad) {
        grad->head(p) += nu * (z - 1.0) * data.x.row(i).transpose();
        (*grad)[p] += nu * (-z + log_z + eta + 1.0 - psi);
      }
    }
    return out;
  }

  const TailConstants tails = compute_tail_constants(nu, c);
  TailSlopes slopes;
  if (grad) slopes = tail_slopes(eta, c);
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double log_mu = detail::linear_predictor(data.x.row(i).transpose(), beta);
    const double log_z = std::log(data.y[i]) - log_mu;
    out.value += detail::log_pdf_from_log(log_z, tails, detail::classify_log(log_z, tails)) - log_mu;
    if (grad) {
      const detail::ScoreTerms s = detail::robust_score(log_z, tails, slopes, psi);
      grad->head(p) += s.d_linear * data.x.row(i).transpose();
      (*grad)[p] += s.d_eta;
      out.at_kink = out.at_kink || s.at_kink;
    }
  }
  return out;
}

}  // namespace rhglm
