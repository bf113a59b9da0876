#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "posterior_grid.hpp"
#include "rhglm/bayes.hpp"
#include "rhglm/simstudy.hpp"

using namespace rhglm;

namespace {

Dataset figure1_data(std::uint64_t seed, double y_n = -1.0) {
  Rng rng(seed);
  Dataset d = generate_base(20, rng);
  if (y_n > 0) d.y[d.n() - 1] = y_n;
  return d;
}

Dataset prior_only() {
  Dataset d;
  d.x.resize(0, 0);
  d.y.resize(0);
  return d;
}

Eigen::VectorXd point(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double e : v) out[k++] = e;
  return out;
}

Chain chain_from(const Eigen::MatrixXd& draws) {
  Chain c;
  c.draws = draws;
  c.log_post_trace = Eigen::VectorXd::Zero(draws.rows());
  c.accept_rate = 1.0;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// log posterior and gradient

TEST(LogPosterior, PriorOnlyMatchesTheGammaPriorWithJacobian) {
  const Dataset d = prior_only();
  const Prior prior{2.0, 50.0};
  for (double eta : {-1.0, 0.0, 2.5, 4.6, 7.0}) {
    const double nu = std::exp(eta);
    const double expected = eta + (prior.alpha - 1.0) * eta - nu / prior.theta - oracle::log_gamma(prior.alpha) -
                            prior.alpha * std::log(prior.theta);
    EXPECT_NEAR(log_posterior(point({eta}), d, prior, Model::Gamma, 1.6), expected, 1e-12);
    const Eigen::VectorXd g = grad_log_posterior(point({eta}), d, prior, Model::Robust, 1.6);
    ASSERT_EQ(g.size(), 1);
    EXPECT_NEAR(g[0], prior.alpha - nu / prior.theta, 1e-12);
  }
}

TEST(LogPosterior, DifferencesCancelTheNormalizingConstant) {
  const Dataset d = figure1_data(3);
  const Prior prior;
  const Eigen::VectorXd a = point({0.02, 0.95, std::log(30.0)});
  const Eigen::VectorXd b = point({-0.05, 1.1, std::log(60.0)});
  const double diff = log_posterior(a, d, prior, Model::Gamma, 1.6) - log_posterior(b, d, prior, Model::Gamma, 1.6);
  double expected = 0.0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    for (int s : {1, -1}) {
      const Eigen::VectorXd& t = s > 0 ? a : b;
      const double nu = std::exp(t[2]);
      const double mu = std::exp(d.x.row(i).dot(t.head(2)));
      expected += s * (std::log(oracle::gamma_mean1_pdf(d.y[i] / mu, nu)) - std::log(mu));
    }
  }
  for (int s : {1, -1}) {
    const Eigen::VectorXd& t = s > 0 ? a : b;
    expected += s * (t[2] + (prior.alpha - 1.0) * t[2] - std::exp(t[2]) / prior.theta);
  }
  EXPECT_NEAR(diff, expected, 1e-9);
}

TEST(LogPosterior, ModelsAgreeWhenEveryRatioIsCentral) {
  Dataset d = figure1_data(5);
  const Eigen::VectorXd t = point({0.01, 0.98, std::log(40.0)});
  const TailConstants tails = compute_tail_constants(40.0, 1.6);
  Rng rng(11);
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double mu = std::exp(d.x.row(i).dot(t.head(2)));
    d.y[i] = mu * (tails.z_l + (tails.z_r - tails.z_l) * (0.05 + 0.9 * rng.uniform()));
  }
  EXPECT_NEAR(log_posterior(t, d, Prior{}, Model::Gamma, 1.6), log_posterior(t, d, Prior{}, Model::Robust, 1.6),
              1e-10);
}

TEST(LogPosterior, InvalidPointsGiveMinusInfinity) {
  const Dataset d = figure1_data(1);
  const double v = log_posterior(point({0.0, 1.0, 800.0}), d, Prior{}, Model::Robust, 1.6);
  EXPECT_EQ(v, -std::numeric_limits<double>::infinity());
  const double w = log_posterior(point({0.0, 900.0, 1.0}), d, Prior{}, Model::Gamma, 1.6);
  EXPECT_FALSE(std::isnan(w));
  EXPECT_THROW(log_posterior(point({0.0, 1.0}), d, Prior{}, Model::Gamma, 1.6), DomainError);
  EXPECT_THROW(log_posterior(point({0.0, 1.0, 1.0}), d, Prior{0.0, 1.0}, Model::Gamma, 1.6), DomainError);
}

TEST(GradLogPosterior, MatchesFiniteDifferencesAwayFromKinks) {
  const Dataset d = figure1_data(8, 9.0);
  const Prior prior;
  std::mt19937_64 gen(42);
  std::uniform_real_distribution<double> b1(-0.3, 0.3), b2(0.6, 1.4), eta(std::log(2.0), std::log(300.0));
  for (Model model : {Model::Gamma, Model::Robust}) {
    int checked = 0;
    while (checked < 200) {
      const Eigen::VectorXd t = point({b1(gen), b2(gen), eta(gen)});
      if (model == Model::Robust) {
        // keep every log ratio clear of the switch points by more than the stencil reach
        const TailConstants tails = compute_tail_constants(std::exp(t[2]), 1.6);
        bool near = false;
        for (Eigen::Index i = 0; i < d.n(); ++i) {
          const double lz = std::log(d.y[i]) - d.x.row(i).dot(t.head(2));
          near = near || std::abs(lz - tails.log_z_r) < 1e-3 ||
                 (tails.has_left_tail() && std::abs(lz - tails.log_z_l) < 1e-3);
        }
        if (near) continue;
      }
      const Eigen::VectorXd g = grad_log_posterior(t, d, prior, model, 1.6);
      for (Eigen::Index k = 0; k < 3; ++k) {
        const double fd = oracle::partial(
            [&](const Eigen::VectorXd& x) { return log_posterior(x, d, prior, model, 1.6); }, t, k, 1e-5);
        EXPECT_LE(oracle::rel_err(g[k], fd), 1e-5) << to_string(model) << " k=" << k << " at " << t.transpose();
      }
      ++checked;
    }
  }
}

TEST(GradLogPosterior, VanishesAtTheMapWithAFlatPrior) {
  const Dataset d = figure1_data(4);
  const Prior flat{1.0, 1e8};
  const optim::Result map = find_map(d, flat, Model::Gamma, 1.6);
  ASSERT_TRUE(map.converged());
  EXPECT_LE(grad_log_posterior(map.x, d, flat, Model::Gamma, 1.6).norm(), 1e-6);
}

TEST(GradLogPosterior, BetaDataTermVanishesWhenResponsesEqualMeans) {
  Dataset d = figure1_data(2);
  const Eigen::VectorXd t = point({0.1, 0.7, std::log(25.0)});
  for (Eigen::Index i = 0; i < d.n(); ++i) d.y[i] = std::exp(d.x.row(i).dot(t.head(2)));
  const Eigen::VectorXd g = grad_log_posterior(t, d, Prior{}, Model::Gamma, 1.6);
  EXPECT_NEAR(g[0], 0.0, 1e-12);
  EXPECT_NEAR(g[1], 0.0, 1e-12);
}

// ---------------------------------------------------------------------------
// sampler

TEST(Hmc, StandardNormalSmokeTarget) {
  LogTarget target;
  target.log_density = [](const Eigen::VectorXd& q) { return -0.5 * q.squaredNorm(); };
  target.gradient = [](const Eigen::VectorXd& q) -> Eigen::VectorXd { return -q; };
  HmcConfig cfg;
  cfg.step_size = 0.25;
  cfg.leapfrog_steps = 6;
  cfg.iterations = 60000;
  cfg.adapt_iterations = 0;
  cfg.seed = 5;
  const Chain chain = hmc_sample_target(target, Eigen::Vector2d(0.5, -0.5), cfg);
  const Eigen::RowVectorXd mean = chain.draws.colwise().mean();
  const Eigen::MatrixXd centred = chain.draws.rowwise() - mean;
  const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(chain.size() - 1);
  EXPECT_NEAR(cov(0, 0), 1.0, 0.05);
  EXPECT_NEAR(cov(1, 1), 1.0, 0.05);
  EXPECT_NEAR(cov(0, 1), 0.0, 0.05);
  EXPECT_GT(chain.accept_rate, 0.9);
  EXPECT_EQ(chain.size(), 54000);
}

TEST(Hmc, TinyStepsAreAlmostAlwaysAccepted) {
  const Dataset d = figure1_data(6);
  HmcConfig cfg;
  cfg.step_size = 1e-5;
  cfg.leapfrog_steps = 1;
  cfg.iterations = 4000;
  cfg.adapt_iterations = 0;
  for (Model model : {Model::Gamma, Model::Robust}) {
    const Chain chain = hmc_sample(d, Prior{}, model, 1.6, cfg);
    EXPECT_GE(chain.accept_rate, 0.999) << to_string(model);
    EXPECT_TRUE(chain.draws.allFinite());
  }
}

TEST(Hmc, SameSeedReproducesTheChainBitForBit) {
  const Dataset d = figure1_data(7, 12.0);
  HmcConfig cfg;
  cfg.iterations = 1500;
  cfg.adapt_iterations = 500;
  cfg.seed = 99;
  const Chain a = hmc_sample(d, Prior{}, Model::Robust, 1.6, cfg);
  const Chain b = hmc_sample(d, Prior{}, Model::Robust, 1.6, cfg);
  ASSERT_EQ(a.draws.rows(), b.draws.rows());
  EXPECT_TRUE((a.draws.array() == b.draws.array()).all());
  EXPECT_TRUE((a.log_post_trace.array() == b.log_post_trace.array()).all());
  EXPECT_EQ(a.accept_rate, b.accept_rate);
  cfg.seed = 100;
  const Chain c = hmc_sample(d, Prior{}, Model::Robust, 1.6, cfg);
  EXPECT_FALSE((a.draws.array() == c.draws.array()).all());
}

TEST(Hmc, PriorOnlyChainRecoversThePriorMean) {
  const Prior prior{2.0, 50.0};
  HmcConfig cfg;
  cfg.step_size = 0.15;
  cfg.leapfrog_steps = 10;
  cfg.iterations = 111112;
  cfg.seed = 2024;
  const Chain chain = hmc_sample(prior_only(), prior, Model::Gamma, 1.6, cfg, point({std::log(80.0)}));
  ASSERT_GE(chain.size(), 100000);
  const Eigen::VectorXd nu = chain.draws.col(0).array().exp();
  const double mcse = mcse_batch_means(nu);
  EXPECT_LE(std::abs(nu.mean() - prior.alpha * prior.theta), 3.0 * mcse) << "mean " << nu.mean() << " mcse " << mcse;
}

TEST(Hmc, PosteriorMeansCoverTheTruthOnCleanData) {
  Rng rng(31);
  const Dataset d = generate_base(200, rng);
  HmcConfig cfg;
  cfg.iterations = 6000;
  cfg.adapt_iterations = 1500;
  cfg.seed = 3;
  const Chain chain = hmc_sample(d, Prior{}, Model::Robust, 1.6, cfg);
  for (Eigen::Index j = 0; j < 2; ++j) {
    const Eigen::VectorXd col = chain.draws.col(j);
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() / (col.size() - 1));
    EXPECT_LE(std::abs(mean - kTrueBeta[j]), 3.0 * sd) << "beta" << j + 1;
  }
}

TEST(Hmc, GammaModeAgreesWithQuasiNewtonMap) {
  const Dataset d = figure1_data(9);
  const Prior prior;
  HmcConfig cfg;
  cfg.iterations = 22000;
  cfg.adapt_iterations = 2000;
  cfg.seed = 17;
  const Chain chain = hmc_sample(d, prior, Model::Gamma, 1.6, cfg);
  Eigen::Index best = 0;
  chain.log_post_trace.maxCoeff(&best);
  const optim::Result map = find_map(d, prior, Model::Gamma, 1.6);
  ASSERT_TRUE(map.converged());
  for (Eigen::Index j = 0; j < 3; ++j) {
    const Eigen::VectorXd col = chain.draws.col(j);
    const double sd = std::sqrt((col.array() - col.mean()).square().sum() / (col.size() - 1));
    EXPECT_LE(std::abs(chain.draws(best, j) - map.x[j]), 0.25 * sd) << "coordinate " << j;
  }
  EXPECT_LE(map.f, -chain.log_post_trace[best] + 1e-9);
}

TEST(Hmc, DivergentTrajectoriesAreRejectedAndCounted) {
  LogTarget target;
  target.log_density = [](const Eigen::VectorXd& q) {
    return q[0] > 1.0 ? -std::numeric_limits<double>::infinity() : -0.5 * q.squaredNorm();
  };
  target.gradient = [](const Eigen::VectorXd& q) -> Eigen::VectorXd { return -q; };
  HmcConfig cfg;
  cfg.step_size = 0.3;
  cfg.leapfrog_steps = 5;
  cfg.iterations = 5000;
  cfg.adapt_iterations = 0;
  const Chain chain = hmc_sample_target(target, point({0.0}), cfg);
  EXPECT_GT(chain.divergences, 0);
  EXPECT_LE(chain.draws.maxCoeff(), 1.0);
  EXPECT_GT(chain.accept_rate, 0.0);
  EXPECT_LE(chain.accept_rate, 1.0);
}

TEST(Hmc, RejectsImproperFlatPriorAndBadConfig) {
  Dataset d = figure1_data(1);
  Dataset tiny;
  tiny.x = d.x.topRows(1);
  tiny.y = d.y.head(1);
  EXPECT_THROW(hmc_sample(tiny, Prior{}, Model::Gamma, 1.6, HmcConfig{}), DomainError);
  HmcConfig bad;
  bad.step_size = 0.0;
  EXPECT_THROW(hmc_sample(d, Prior{}, Model::Gamma, 1.6, bad), DomainError);
  bad = HmcConfig{};
  bad.burn_in_fraction = 1.0;
  EXPECT_THROW(hmc_sample(d, Prior{}, Model::Gamma, 1.6, bad), DomainError);
}

// ---------------------------------------------------------------------------
// summaries

TEST(Hpd, IntegerSamplesGiveTheNinetyFiveWideWindow) {
  std::vector<double> s(100);
  for (int i = 0; i < 100; ++i) s[i] = i + 1;
  std::shuffle(s.begin(), s.end(), std::mt19937_64(1));
  const auto [lo, hi] = hpd_interval(s, 0.95);
  EXPECT_EQ(hi - lo, 94.0);  // 95 samples span 94 unit gaps
  EXPECT_EQ(lo, 1.0);        // ties go to the smallest lower bound
}

TEST(Hpd, SymmetricSamplesApproachTheCentralInterval) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> norm;
  std::vector<double> s(200000);
  for (double& v : s) v = norm(gen);
  const auto [lo, hi] = hpd_interval(s, 0.9);
  EXPECT_NEAR(lo, -1.6448536269514722, 0.02);
  EXPECT_NEAR(hi, 1.6448536269514722, 0.02);
}

TEST(Hpd, ExponentialIntervalStartsNearZero) {
  std::mt19937_64 gen(4);
  std::exponential_distribution<double> ex(1.0);
  std::vector<double> s(100000);
  for (double& v : s) v = ex(gen);
  const auto [lo, hi] = hpd_interval(s, 0.95);
  EXPECT_LT(lo, 0.05);
  EXPECT_NEAR(hi, -std::log(0.05), 0.1);
}

TEST(Hpd, RejectsDegenerateInput) {
  EXPECT_THROW(hpd_interval(std::vector<double>(9, 1.0), 0.95), DomainError);
  EXPECT_THROW(hpd_interval(std::vector<double>(50, 1.0), 1.0), DomainError);
  EXPECT_THROW(hpd_interval(std::vector<double>(50, 1.0), 0.0), DomainError);
}

TEST(Summaries, ReportNuOnItsNaturalScale) {
  Eigen::MatrixXd draws(20, 2);
  for (int k = 0; k < 20; ++k) draws.row(k) << 0.1 * k, std::log(10.0 + k);
  const auto s = summarize(chain_from(draws), 0.9);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].name, "beta1");
  EXPECT_EQ(s[1].name, "nu");
  EXPECT_NEAR(s[0].mean, 0.95, 1e-12);
  EXPECT_NEAR(s[1].mean, 19.5, 1e-12);
  EXPECT_NEAR(s[1].hpd_upper - s[1].hpd_lower, 17.0, 1e-12);
}

TEST(BayesianPearson, SingleRepeatedDrawEqualsPlugIn) {
  const Dataset d = figure1_data(2, 8.0);
  const Eigen::VectorXd t = point({0.03, 0.9, std::log(33.0)});
  Eigen::MatrixXd draws(5, 3);
  for (int k = 0; k < 5; ++k) draws.row(k) = t.transpose();
  const BayesianResiduals r = bayesian_pearson(d, chain_from(draws));
  const Eigen::VectorXd plug = pearson_residuals(d, t.head(2), 33.0);
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    EXPECT_NEAR(r.residual_means[i], plug[i], 1e-12 * std::max(1.0, std::abs(plug[i])));
    EXPECT_NEAR(r.mu_means[i], std::exp(d.x.row(i).dot(t.head(2))), 1e-12);
  }
}

TEST(BayesianPearson, TwoDrawsAverage) {
  const Dataset d = figure1_data(2);
  const Eigen::VectorXd a = point({0.0, 1.0, std::log(40.0)});
  const Eigen::VectorXd b = point({0.2, 0.8, std::log(10.0)});
  Eigen::MatrixXd draws(2, 3);
  draws.row(0) = a.transpose();
  draws.row(1) = b.transpose();
  const BayesianResiduals r = bayesian_pearson(d, chain_from(draws));
  const Eigen::VectorXd ra = pearson_residuals(d, a.head(2), 40.0);
  const Eigen::VectorXd rb = pearson_residuals(d, b.head(2), 10.0);
  for (Eigen::Index i = 0; i < d.n(); ++i) EXPECT_NEAR(r.residual_means[i], 0.5 * (ra[i] + rb[i]), 1e-12);
  EXPECT_THROW(bayesian_pearson(d, chain_from(Eigen::MatrixXd(0, 3))), DomainError);
}

TEST(BayesianPearson, RobustResidualsAreMoreDispersedUnderContamination) {
  Rng rng(12);
  Dataset d = generate_base(40, rng);
  for (Eigen::Index i : {3, 11, 27}) d.y[i] *= 25.0;
  HmcConfig cfg;
  cfg.iterations = 3000;
  cfg.adapt_iterations = 1000;
  auto variance = [](const Eigen::VectorXd& v) { return (v.array() - v.mean()).square().sum() / (v.size() - 1); };
  const double vg = variance(bayesian_pearson(d, hmc_sample(d, Prior{}, Model::Gamma, 1.6, cfg)).residual_means);
  const double vr = variance(bayesian_pearson(d, hmc_sample(d, Prior{}, Model::Robust, 1.6, cfg)).residual_means);
  EXPECT_GT(vr, vg);
}

// ---------------------------------------------------------------------------
// outlier limits

TEST(OutlierLimit, PosteriorOfBetaConvergesToTheOutlierFreePosterior) {
  const Dataset d = figure1_data(1);
  const Dataset kept = d.without_row(d.n() - 1);
  const FitResult ref = fit_gamma_mle(kept);
  const Eigen::Matrix2d cov = (40.0 * kept.x.transpose() * kept.x).inverse();
  const Eigen::Vector2d hw(8 * std::sqrt(cov(0, 0)), 8 * std::sqrt(cov(1, 1)));
  const auto base = grid::beta2_marginal(kept, 40.0, 1.6, ref.params.beta, hw, 161);
  double prev = 1.0;
  for (double omega : {1e2, 1e4, 1e6}) {
    Dataset o = d;
    o.y[d.n() - 1] *= omega;
    const double tv = grid::total_variation(grid::beta2_marginal(o, 40.0, 1.6, ref.params.beta, hw, 161), base);
    EXPECT_LT(tv, prev) << "omega=" << omega;
    prev = tv;
  }
  EXPECT_LE(prev, 0.05);
}

TEST(OutlierLimit, OutlierTermFallsSlowerThanTheRestRisesInNu) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset d = figure1_data(seed, 15.0);
    const Dataset kept = d.without_row(d.n() - 1);
    Dataset out;
    out.x = d.x.bottomRows(1);
    out.y = d.y.tail(1);
    const FitResult ref = fit_gamma_mle(kept);
    auto term = [&](const Dataset& s, double nu) {
      Eigen::VectorXd t(3);
      t << ref.params.beta, std::log(nu);
      return model_loglik(Model::Robust, s, t, 1.6).value;
    };
    const double nu_hat = ref.params.nu;
    const double rise = term(kept, nu_hat) - term(kept, 0.5 * nu_hat);
    const double drop = term(out, 0.5 * nu_hat) - term(out, nu_hat);
    EXPECT_GT(drop, 0.0) << seed;
    EXPECT_LT(drop, rise) << seed;
  }
}
