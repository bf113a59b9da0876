#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rhglm/errors.hpp"

namespace rhglm {

/// Design matrix (n x p, row i is x_i) and strictly positive responses.
struct Dataset {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  std::vector<std::string> column_names;

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index p() const { return x.cols(); }

  /// Checks n >= p >= 1, y > 0 and full column rank.
  void validate() const {
    if (x.rows() != y.size()) throw DataError("design matrix and response differ in length");
    if (p() < 1) throw DataError("design matrix has no columns");
    if (n() < p()) throw DataError("fewer observations than coefficients (n < p)");
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (!(y[i] > 0.0) || !std::isfinite(y[i])) {
        throw DataError("response must be strictly positive and finite (row " + std::to_string(i) + ")");
      }
    }
    if (!x.allFinite()) throw DataError("design matrix contains non-finite values");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < p()) throw DataError("design matrix is rank deficient");
  }

  Dataset without_row(Eigen::Index row) const {
    Dataset out;
    out.x.resize(n() - 1, p());
    out.y.resize(n() - 1);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < n(); ++i) {
      if (i == row) continue;
      out.x.row(k) = x.row(i);
      out.y[k] = y[i];
      ++k;
    }
    out.column_names = column_names;
    return out;
  }
};

}  // namespace rhglm
