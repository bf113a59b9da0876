#pragma once

// Small-dimensional minimizers: projected L-BFGS with box bounds and
// backtracking (Armijo) line search, Nelder-Mead, and a compass check used
// to certify local optimality where the gradient is discontinuous.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rhglm::optim {

using Vector = Eigen::VectorXd;

/// Returns f(x); writes the gradient when grad is non-null. Non-finite
/// values are treated as "outside the domain" by the line search.
using Objective = std::function<double(const Vector& x, Vector* grad)>;

struct Bounds {
  Vector lower;
  Vector upper;

  static Bounds unbounded(Eigen::Index dim) {
    const double inf = std::numeric_limits<double>::infinity();
    return {Vector::Constant(dim, -inf), Vector::Constant(dim, inf)};
  }
  Vector project(const Vector& x) const { return x.cwiseMax(lower).cwiseMin(upper); }
};

enum class Status { Converged, MaxIterations, LineSearchFailed, NonFinite };

inline std::string to_string(Status s) {
  switch (s) {
    case Status::Converged: return "converged";
    case Status::MaxIterations: return "max_iterations";
    case Status::LineSearchFailed: return "line_search_failed";
    case Status::NonFinite: return "non_finite";
  }
  return "unknown";
}

struct LbfgsOptions {
  double grad_tol = 1e-8;
  int max_iterations = 500;
  int memory = 8;
};

struct Result {
  Vector x;
  double f = std::numeric_limits<double>::infinity();
  Vector grad;
  double projected_grad_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int evaluations = 0;
  Status status = Status::MaxIterations;
  bool at_bound = false;

  bool converged() const { return status == Status::Converged; }
};

/// Gradient with components zeroed where a bound blocks descent.
inline Vector projected_gradient(const Vector& x, const Vector& g, const Bounds& b) {
  Vector pg = g;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if ((x[i] <= b.lower[i] && g[i] > 0.0) || (x[i] >= b.upper[i] && g[i] < 0.0)) pg[i] = 0.0;
  }
  return pg;
}

inline Result minimize_lbfgs(const Objective& f, Vector x0, const Bounds& bounds,
                             const LbfgsOptions& opt = {}) {
  Result r;
  r.x = bounds.project(x0);
  r.grad.resize(r.x.size());
  r.f = f(r.x, &r.grad);
  ++r.evaluations;
  if (!std::isfinite(r.f) || !r.grad.allFinite()) {
    r.status = Status::NonFinite;
    return r;
  }

  std::deque<Vector> s_hist, y_hist;
  std::deque<double> rho_hist;
  Vector g_new(r.x.size());

  for (r.iterations = 0; r.iterations < opt.max_iterations; ++r.iterations) {
    const Vector pg = projected_gradient(r.x, r.grad, bounds);
    r.projected_grad_norm = pg.lpNorm<Eigen::Infinity>();
    if (r.projected_grad_norm <= opt.grad_tol) {
      r.status = Status::Converged;
      break;
    }
    // variables pinned at a bound are frozen for this step
    std::vector<bool> frozen(r.x.size());
    for (Eigen::Index i = 0; i < r.x.size(); ++i) frozen[i] = pg[i] == 0.0 && r.grad[i] != 0.0;

    // two-loop recursion
    Vector q = pg;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho_hist[k] * s_hist[k].dot(q);
      q -= alpha[k] * y_hist[k];
    }
    if (!s_hist.empty()) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * y_hist[k].dot(q);
      q += (alpha[k] - beta) * s_hist[k];
    }
    Vector d = -q;
    for (Eigen::Index i = 0; i < d.size(); ++i)
      if (frozen[i]) d[i] = 0.0;
    if (!(d.dot(pg) < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      d = -pg;
    }
    double step = s_hist.empty() ? std::min(1.0, 1.0 / d.lpNorm<Eigen::Infinity>()) : 1.0;

    bool accepted = false;
    Vector x_new;
    double f_new = 0.0;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = bounds.project(r.x + step * d);
      f_new = f(x_new, &g_new);
      ++r.evaluations;
      const double decrease = r.grad.dot(x_new - r.x);
      if (!std::isfinite(f_new) || !g_new.allFinite()) {
        step *= 0.5;
        continue;
      }
      // approximate Wolfe test (Hager-Zhang) for when f differences are lost in rounding
      const double slope_new = g_new.dot(x_new - r.x);
      const bool approx_wolfe = f_new <= r.f + 1e-12 * std::abs(r.f) && slope_new >= 0.9 * decrease &&
                                slope_new <= (2 * 1e-4 - 1.0) * decrease;
      if (f_new <= r.f + 1e-4 * decrease || approx_wolfe) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted || x_new == r.x) {
      r.status = Status::LineSearchFailed;
      break;
    }
    const Vector s = x_new - r.x;
    const Vector yv = g_new - r.grad;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(yv);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opt.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    r.x = x_new;
    r.f = f_new;
    r.grad = g_new;
  }
  r.projected_grad_norm = projected_gradient(r.x, r.grad, bounds).lpNorm<Eigen::Infinity>();
  for (Eigen::Index i = 0; i < r.x.size(); ++i)
    r.at_bound = r.at_bound || r.x[i] <= bounds.lower[i] || r.x[i] >= bounds.upper[i];
  return r;
}

struct NelderMeadOptions {
  double initial_step = 1e-3;
  double f_tol = 1e-13;
  int max_evaluations = 4000;
};

/// Derivative-free simplex search; used only to move off a kink where the
/// line search stalls. Points outside the bounds are projected.
inline Result minimize_nelder_mead(const Objective& f, const Vector& x0, const Bounds& bounds,
                                   const NelderMeadOptions& opt = {}) {
  const Eigen::Index dim = x0.size();
  auto eval = [&](const Vector& x) {
    const double v = f(bounds.project(x), nullptr);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  std::vector<Vector> pts(dim + 1, bounds.project(x0));
  std::vector<double> vals(dim + 1);
  for (Eigen::Index i = 0; i < dim; ++i) pts[i + 1][i] += opt.initial_step * std::max(1.0, std::abs(x0[i]));
  int evals = 0;
  for (auto i = 0; i <= dim; ++i, ++evals) vals[i] = eval(pts[i]);

  std::vector<std::size_t> order(dim + 1);
  while (evals < opt.max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return vals[a] < vals[b]; });
    const auto best = order.front(), worst = order.back(), second = order[dim - 1];
    if (std::abs(vals[worst] - vals[best]) <= opt.f_tol * (1.0 + std::abs(vals[best]))) break;

    Vector centroid = Vector::Zero(dim);
    for (auto i : order)
      if (i != worst) centroid += pts[i];
    centroid /= static_cast<double>(dim);

    const Vector reflected = centroid + (centroid - pts[worst]);
    const double fr = eval(reflected);
    ++evals;
    if (fr < vals[best]) {
      const Vector expanded = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = eval(expanded);
      ++evals;
      if (fe < fr) {
        pts[worst] = expanded, vals[worst] = fe;
      } else {
        pts[worst] = reflected, vals[worst] = fr;
      }
    } else if (fr < vals[second]) {
      pts[worst] = reflected, vals[worst] = fr;
    } else {
      const Vector contracted = centroid + 0.5 * (pts[worst] - centroid);
      const double fc = eval(contracted);
      ++evals;
      if (fc < vals[worst]) {
        pts[worst] = contracted, vals[worst] = fc;
      } else {
        for (auto i : order) {
          if (i == best) continue;
          pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
          vals[i] = eval(pts[i]);
          ++evals;
        }
      }
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(vals.begin(), vals.end()) - vals.begin());
  Result r;
  r.x = bounds.project(pts[best]);
  r.grad.resize(dim);
  r.f = f(r.x, &r.grad);
  r.evaluations = evals + 1;
  r.iterations = evals;
  r.status = evals < opt.max_evaluations ? Status::Converged : Status::MaxIterations;
  r.projected_grad_norm = projected_gradient(r.x, r.grad, bounds).lpNorm<Eigen::Infinity>();
  return r;
}

/// True when no move of +-step along a coordinate (or along the negative
/// gradient) lowers f by more than a rounding-level amount.
inline bool compass_certified(const Objective& f, const Vector& x, double fx, const Bounds& bounds,
                              double step = 1e-6) {
  const double slack = 1e-12 * (1.0 + std::abs(fx));
  auto improves = [&](const Vector& candidate) {
    const Vector c = bounds.project(candidate);
    if (c == x) return false;
    const double v = f(c, nullptr);
    return std::isfinite(v) && v < fx - slack;
  };
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    for (double sign : {-1.0, 1.0}) {
      Vector c = x;
      c[i] += sign * step;
      if (improves(c)) return false;
    }
  }
  Vector g(x.size());
  f(x, &g);
  if (g.norm() > 0.0 && improves(x - step * g / g.norm())) return false;
  return true;
}

}  // namespace rhglm::optim
