#pragma once

#include "mrbsdej/diagnostics.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mrbsdej {

struct RegressionOptions {
    int degree = 2;        ///< polynomial degree in the running jump counts (1..3)
    double ridge = 1e-8;   ///< penalty on standardized columns when the Gram matrix is singular
    double rank_tol = 1e-11;
    bool operator==(const RegressionOptions&) const = default;
};

/// Writes the raw (unstandardized) features of one row into `out`.
using FeatureMap = std::function<void(std::size_t row, double* out)>;

/// Weighted least-squares projection onto span{1, features}.
///
/// Features are recomputed on demand instead of stored, so the memory cost is
/// independent of the row count. Constant columns and columns that duplicate an
/// earlier one are dropped; a remaining numerical rank deficiency switches to a
/// ridge penalty and records a "regression_ridge" warning.
class LeastSquaresProjector {
public:
    LeastSquaresProjector(std::size_t rows, int raw_features, FeatureMap features,
                          std::span<const double> weights, const RegressionOptions& opt,
                          WarningLog* log = nullptr, const std::string& context = {});

    std::size_t rows() const noexcept { return rows_; }
    int active_columns() const noexcept { return static_cast<int>(kept_.size()); }
    bool ridged() const noexcept { return ridged_; }

    /// Coefficients in the standardized basis (intercept first).
    Eigen::VectorXd fit(std::span<const double> response) const;
    /// Fitted values at every row.
    void project(std::span<const double> response, std::span<double> out) const;
    /// Fitted value for an arbitrary raw feature vector.
    double predict(const Eigen::VectorXd& coefficients, const double* raw) const;

private:
    void standardized_row(std::size_t row, double* raw, double* out) const;

    std::size_t rows_;
    int raw_features_;
    FeatureMap features_;
    std::vector<double> weights_;
    std::vector<int> kept_;
    std::vector<double> mean_;
    std::vector<double> scale_;
    Eigen::LDLT<Eigen::MatrixXd> gram_;
    bool ridged_ = false;
};

/// Number of monomials of degree 1..degree in `variables` variables.
int polynomial_feature_count(int variables, int degree);
/// Monomials of degree 1..degree, graded lexicographic order.
void polynomial_features(std::span<const double> x, int degree, double* out);

}  // namespace mrbsdej
