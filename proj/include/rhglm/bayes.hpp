#pragma once

// Posterior inference in the (beta, eta = log nu) parameterization with a
// flat prior on beta and a gamma(alpha, theta) prior on nu, sampled by
// Hamiltonian Monte Carlo with a diagonal mass matrix.

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "rhglm/dataset.hpp"
#include "rhglm/estimation.hpp"
#include "rhglm/likelihood.hpp"
#include "rhglm/optim.hpp"
#include "rhglm/rng.hpp"
#include "rhglm/special_fns.hpp"

namespace rhglm {

/// pi(beta | nu) flat; nu ~ gamma(shape alpha, scale theta).
struct Prior {
  double alpha = 2.0;
  double theta = 50.0;

  void validate() const {
    detail::require(alpha > 0.0 && std::isfinite(alpha), "Prior: alpha must be positive");
    detail::require(theta > 0.0 && std::isfinite(theta), "Prior: theta must be positive");
  }
};

/// Unnormalized log posterior including the log-Jacobian eta of nu = e^eta.
/// Numerically invalid points give -inf.
inline double log_posterior(const Eigen::Ref<const Eigen::VectorXd>& point, const Dataset& data,
                            const Prior& prior, Model model, double c) {
  prior.validate();
  detail::require(point.size() == data.p() + 1, "log_posterior: point must have length p + 1");
  const double eta = point[data.p()];
  const double nu = std::exp(eta);
  const double ninf = -std::numeric_limits<double>::infinity();
  if (!(nu > 0.0) || !std::isfinite(nu)) return ninf;
  try {
    const double log_prior = (prior.alpha - 1.0) * eta - nu / prior.theta - log_gamma(prior.alpha) -
                             prior.alpha * std::log(prior.theta);
    const double value = eta + log_prior + model_loglik(model, data, point, c).value;
    return std::isfinite(value) ? value : ninf;
  } catch (const OverflowError&) {
    return ninf;
  } catch (const DomainError&) {
    return ninf;
  }
}

inline Eigen::VectorXd grad_log_posterior(const Eigen::Ref<const Eigen::VectorXd>& point,
                                          const Dataset& data, const Prior& prior, Model model,
                                          double c, bool* at_kink = nullptr) {
  prior.validate();
  detail::require(point.size() == data.p() + 1, "grad_log_posterior: point must have length p + 1");
  Eigen::VectorXd grad;
  const LogLikEval e = model_loglik(model, data, point, c, &grad);
  grad[data.p()] += prior.alpha - std::exp(point[data.p()]) / prior.theta;
  if (at_kink) *at_kink = e.at_kink;
  return grad;
}

struct HmcConfig {
  double step_size = 0.01;
  int leapfrog_steps = 20;
  int iterations = 100000;
  double burn_in_fraction = 0.10;
  std::uint64_t seed = 1;
  // empty: estimated from a pilot run of adapt_iterations
  Eigen::VectorXd mass_diag;
  int adapt_iterations = 5000;

  void validate() const {
    detail::require(step_size > 0.0 && std::isfinite(step_size), "HmcConfig: step_size must be positive");
    detail::require(leapfrog_steps >= 1, "HmcConfig: leapfrog_steps must be at least 1");
    detail::require(iterations >= 1, "HmcConfig: iterations must be at least 1");
    detail::require(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0,
                    "HmcConfig: burn_in_fraction must lie in [0, 1)");
    detail::require(mass_diag.size() == 0 || (mass_diag.array() > 0.0).all(),
                    "HmcConfig: mass_diag entries must be positive");
  }
};

struct Chain {
  Eigen::MatrixXd draws;  // kept iterations x (p + 1), columns beta..., eta
  Eigen::VectorXd log_post_trace;
  double accept_rate = 0.0;
  int divergences = 0;
  std::uint64_t seed = 0;
  Eigen::VectorXd mass_diag;
  double step_size = 0.0;
  int leapfrog_steps = 0;

  Eigen::Index size() const { return draws.rows(); }
};

/// Log density and its gradient at a point.
struct LogTarget {
  std::function<double(const Eigen::VectorXd&)> log_density;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
};

namespace detail {

struct HmcRun {
  Eigen::MatrixXd draws;
  Eigen::VectorXd log_post;
  Eigen::VectorXd last;
  long accepted = 0;
  int divergences = 0;
};

inline HmcRun hmc_run(const LogTarget& target, Eigen::VectorXd q, const Eigen::VectorXd& mass, double eps,
                      int steps, int iterations, int keep_from, Rng rng) {
  const Eigen::Index d = q.size();
  const Eigen::VectorXd inv_mass = mass.cwiseInverse();
  const Eigen::VectorXd sqrt_mass = mass.cwiseSqrt();
  HmcRun run;
  run.draws.resize(iterations - keep_from, d);
  run.log_post.resize(iterations - keep_from);

  double logp = target.log_density(q);
  Eigen::VectorXd grad = target.gradient(q);
  Eigen::VectorXd momentum(d);
  for (int it = 0; it < iterations; ++it) {
    for (Eigen::Index j = 0; j < d; ++j) momentum[j] = sqrt_mass[j] * sample_normal(rng);
    const double h0 = -logp + 0.5 * momentum.cwiseProduct(inv_mass).dot(momentum);

    Eigen::VectorXd qn = q;
    Eigen::VectorXd pn = momentum + 0.5 * eps * grad;
    Eigen::VectorXd gn = grad;
    bool finite = true;
    for (int l = 0; l < steps; ++l) {
      qn += eps * pn.cwiseProduct(inv_mass);
      gn = target.gradient(qn);
      if (!gn.allFinite()) {
        finite = false;
        break;
      }
      pn += (l + 1 == steps ? 0.5 : 1.0) * eps * gn;
    }
    const double logp_new = finite ? target.log_density(qn) : -std::numeric_limits<double>::infinity();
    const double h1 = -logp_new + 0.5 * pn.cwiseProduct(inv_mass).dot(pn);
    const double u = rng.uniform();
    if (!std::isfinite(h1)) {
      ++run.divergences;
    } else if (std::log(u) < h0 - h1) {
      q = std::move(qn);
      grad = std::move(gn);
      logp = logp_new;
      ++run.accepted;
    }
    if (it >= keep_from) {
      run.draws.row(it - keep_from) = q.transpose();
      run.log_post[it - keep_from] = logp;
    }
  }
  run.last = q;
  return run;
}

}  // namespace detail

/// HMC on an arbitrary smooth target; the 2-D normal smoke test and the
/// prior-only checks go through here directly.
inline Chain hmc_sample_target(const LogTarget& target, const Eigen::VectorXd& init, const HmcConfig& config) {
  config.validate();
  const Eigen::Index d = init.size();
  detail::require(config.mass_diag.size() == 0 || config.mass_diag.size() == d,
                  "hmc: mass_diag must have one entry per coordinate");
  detail::require(std::isfinite(target.log_density(init)), "hmc: initial point has zero density");

  const Rng root(config.seed);
  Eigen::VectorXd mass = config.mass_diag;
  Eigen::VectorXd start = init;
  if (mass.size() == 0) {
    mass = Eigen::VectorXd::Ones(d);
    if (config.adapt_iterations > 0) {
      const int pilot_n = config.adapt_iterations;
      const detail::HmcRun pilot = detail::hmc_run(target, init, mass, config.step_size, config.leapfrog_steps,
                                                   pilot_n, pilot_n / 2, root.substream(1));
      const Eigen::RowVectorXd mean = pilot.draws.colwise().mean();
      const Eigen::VectorXd var =
          ((pilot.draws.rowwise() - mean).array().square().colwise().sum() /
           std::max<double>(1.0, static_cast<double>(pilot.draws.rows() - 1)))
              .transpose();
      for (Eigen::Index j = 0; j < d; ++j) mass[j] = var[j] > 1e-300 ? 1.0 / var[j] : 1.0;
      start = pilot.last;
    }
  }
  const int burn = static_cast<int>(std::floor(config.burn_in_fraction * config.iterations));
  const detail::HmcRun run = detail::hmc_run(target, start, mass, config.step_size, config.leapfrog_steps,
                                             config.iterations, burn, root.substream(2));
  Chain chain;
  chain.draws = run.draws;
  chain.log_post_trace = run.log_post;
  chain.accept_rate = static_cast<double>(run.accepted) / config.iterations;
  chain.divergences = run.divergences;
  chain.seed = config.seed;
  chain.mass_diag = mass;
  chain.step_size = config.step_size;
  chain.leapfrog_steps = config.leapfrog_steps;
  return chain;
}

/// Posterior mode by quasi-Newton, used to start the chains and as a
/// reference point for the sampler.
inline optim::Result find_map(const Dataset& data, const Prior& prior, Model model, double c) {
  const Eigen::Index p = data.p();
  Eigen::VectorXd start(p + 1);
  if (data.n() > 0 && p > 0) {
    start = detail::gamma_start(data);
  } else {
    start.setZero();
    start[p] = std::log(prior.alpha * prior.theta);
  }
  optim::Bounds bounds = detail::theta_bounds(p);
  const optim::Objective objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    const double v = log_posterior(x, data, prior, model, c);
    if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
    if (g) *g = -grad_log_posterior(x, data, prior, model, c);
    return -v;
  };
  return optim::minimize_lbfgs(objective, start, bounds, {1e-8, 1000, 8});
}

/// Samples the posterior of (beta, eta). A flat prior on beta needs n >= p.
inline Chain hmc_sample(const Dataset& data, const Prior& prior, Model model, double c, const HmcConfig& config,
                        const std::optional<Eigen::VectorXd>& init = std::nullopt) {
  prior.validate();
  if (data.n() < data.p()) {
    throw DomainError("flat prior on beta requires n >= p for a proper posterior");
  }
  if (data.n() > 0) data.validate();
  const Eigen::VectorXd start = init ? *init : find_map(data, prior, model, c).x;
  LogTarget target;
  target.log_density = [&](const Eigen::VectorXd& x) { return log_posterior(x, data, prior, model, c); };
  target.gradient = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    try {
      return grad_log_posterior(x, data, prior, model, c);
    } catch (const std::exception&) {
      return Eigen::VectorXd::Constant(x.size(), std::numeric_limits<double>::quiet_NaN());
    }
  };
  return hmc_sample_target(target, start, config);
}

/// Shortest interval covering ceil(prob * m) of the sorted samples; ties go
/// to the smallest lower bound.
inline std::pair<double, double> hpd_interval(std::vector<double> samples, double prob) {
  detail::require(prob > 0.0 && prob < 1.0, "hpd_interval: prob must lie in (0, 1)");
  detail::require(samples.size() >= 10, "hpd_interval: need at least 10 samples");
  std::sort(samples.begin(), samples.end());
  const std::size_t m = samples.size();
  const std::size_t k = std::min(m, static_cast<std::size_t>(std::ceil(prob * static_cast<double>(m) - 1e-9)));
  std::size_t best = 0;
  double width = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + k <= m; ++i) {
    const double w = samples[i + k - 1] - samples[i];
    if (w < width) {
      width = w;
      best = i;
    }
  }
  return {samples[best], samples[best + k - 1]};
}

inline std::pair<double, double> hpd_interval(const Eigen::Ref<const Eigen::VectorXd>& samples, double prob) {
  return hpd_interval(std::vector<double>(samples.data(), samples.data() + samples.size()), prob);
}

/// Batch-means Monte Carlo standard error of the mean.
inline double mcse_batch_means(const Eigen::Ref<const Eigen::VectorXd>& samples, int batches = 50) {
  const Eigen::Index m = samples.size();
  detail::require(m >= 2 * batches, "mcse_batch_means: too few samples for the batch count");
  const Eigen::Index len = m / batches;
  Eigen::VectorXd means(batches);
  for (int b = 0; b < batches; ++b) means[b] = samples.segment(b * len, len).mean();
  const double grand = means.mean();
  const double var = (means.array() - grand).square().sum() / (batches - 1);
  return std::sqrt(var / batches);
}

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double hpd_lower = 0.0;
  double hpd_upper = 0.0;
};

/// Mean, SD and HPD interval for beta_1..beta_p and nu = e^eta.
inline std::vector<ParameterSummary> summarize(const Chain& chain, double prob = 0.95) {
  std::vector<ParameterSummary> out;
  const Eigen::Index d = chain.draws.cols();
  for (Eigen::Index j = 0; j < d; ++j) {
    Eigen::VectorXd col = chain.draws.col(j);
    ParameterSummary s;
    if (j + 1 == d) {
      col = col.array().exp();
      s.name = "nu";
    } else {
      s.name = "beta" + std::to_string(j + 1);
    }
    s.mean = col.mean();
    s.sd = col.size() > 1 ? std::sqrt((col.array() - s.mean).square().sum() / (col.size() - 1)) : 0.0;
    std::tie(s.hpd_lower, s.hpd_upper) = hpd_interval(col, prob);
    out.push_back(std::move(s));
  }
  return out;
}

struct BayesianResiduals {
  Eigen::VectorXd residual_means;
  Eigen::VectorXd mu_means;
};

/// Posterior means of the Pearson residuals and of mu_i over the kept draws.
inline BayesianResiduals bayesian_pearson(const Dataset& data, const Chain& chain) {
  detail::require(chain.size() > 0, "bayesian_pearson: empty chain");
  detail::require(chain.draws.cols() == data.p() + 1, "bayesian_pearson: chain does not match the design");
  BayesianResiduals out;
  out.residual_means.setZero(data.n());
  out.mu_means.setZero(data.n());
  for (Eigen::Index k = 0; k < chain.size(); ++k) {
    const Eigen::VectorXd beta = chain.draws.row(k).head(data.p()).transpose();
    const double nu = std::exp(chain.draws(k, data.p()));
    const Eigen::VectorXd mu = (data.x * beta).array().exp();
    out.mu_means += mu;
    out.residual_means += (std::sqrt(nu) * (data.y - mu).array() / mu.array()).matrix();
  }
  out.residual_means /= static_cast<double>(chain.size());
  out.mu_means /= static_cast<double>(chain.size());
  return out;
}

}  // namespace rhglm
