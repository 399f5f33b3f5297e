#include "mrbsdej/regression.hpp"

#include <cmath>
#include <sstream>

namespace mrbsdej {

int polynomial_feature_count(int variables, int degree) {
    // Monomials of total degree d in v variables: C(v + d - 1, d).
    int total = 0;
    for (int d = 1; d <= degree; ++d) {
        long long c = 1;
        for (int i = 1; i <= d; ++i) c = c * (variables + d - i) / i;
        total += static_cast<int>(c);
    }
    return total;
}

namespace {

void monomials(std::span<const double> x, int degree, int start, double value, int remaining,
               double*& out) {
    if (remaining == 0) {
        *out++ = value;
        return;
    }
    for (int i = start; i < static_cast<int>(x.size()); ++i)
        monomials(x, degree, i, value * x[static_cast<std::size_t>(i)], remaining - 1, out);
}

}  // namespace

void polynomial_features(std::span<const double> x, int degree, double* out) {
    for (int d = 1; d <= degree; ++d) monomials(x, degree, 0, 1.0, d, out);
}

LeastSquaresProjector::LeastSquaresProjector(std::size_t rows, int raw_features, FeatureMap features,
                                             std::span<const double> weights,
                                             const RegressionOptions& opt, WarningLog* log,
                                             const std::string& context)
    : rows_(rows), raw_features_(raw_features), features_(std::move(features)),
      weights_(weights.begin(), weights.end()) {
    if (weights_.size() != rows_) throw std::invalid_argument("regression: weight count mismatch");
    const auto p = static_cast<std::size_t>(raw_features_);
    std::vector<double> raw(p), mean(p, 0.0);
    double wsum = 0.0;
    for (std::size_t r = 0; r < rows_; ++r) {
        features_(r, raw.data());
        wsum += weights_[r];
        for (std::size_t i = 0; i < p; ++i) mean[i] += weights_[r] * raw[i];
    }
    if (!(wsum > 0.0)) throw std::invalid_argument("regression: weights sum to zero");
    for (double& m : mean) m /= wsum;

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    Eigen::VectorXd centered(static_cast<Eigen::Index>(p));
    for (std::size_t r = 0; r < rows_; ++r) {
        features_(r, raw.data());
        for (std::size_t i = 0; i < p; ++i) centered[static_cast<Eigen::Index>(i)] = raw[i] - mean[i];
        cov.selfadjointView<Eigen::Lower>().rankUpdate(centered, weights_[r] / wsum);
    }
    cov = cov.selfadjointView<Eigen::Lower>();

    for (std::size_t i = 0; i < p; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double sd = std::sqrt(std::max(cov(ii, ii), 0.0));
        if (sd <= 1e-12 * (1.0 + std::abs(mean[i]))) continue;
        bool duplicate = false;
        for (int j : kept_) {
            const double rho = cov(ii, j) / (sd * std::sqrt(cov(j, j)));
            if (std::abs(rho) > 1.0 - 1e-10) {
                duplicate = true;
                break;
            }
        }
        if (duplicate) continue;
        kept_.push_back(static_cast<int>(i));
        mean_.push_back(mean[i]);
        scale_.push_back(sd);
    }

    const auto q = static_cast<Eigen::Index>(kept_.size());
    Eigen::MatrixXd corr(q, q);
    for (Eigen::Index a = 0; a < q; ++a)
        for (Eigen::Index b = 0; b < q; ++b)
            corr(a, b) = cov(kept_[static_cast<std::size_t>(a)], kept_[static_cast<std::size_t>(b)]) /
                         (scale_[static_cast<std::size_t>(a)] * scale_[static_cast<std::size_t>(b)]);
    if (q > 0) {
        gram_.compute(corr);
        const Eigen::VectorXd d = gram_.vectorD().cwiseAbs();
        if (gram_.info() != Eigen::Success || d.minCoeff() < opt.rank_tol * d.maxCoeff()) {
            ridged_ = true;
            corr.diagonal().array() += opt.ridge;
            gram_.compute(corr);
            if (log) {
                std::ostringstream msg;
                msg << context << ": rank-deficient regression Gram matrix, ridge penalty " << opt.ridge;
                log->add("regression_ridge", msg.str());
            }
        }
    }
}

void LeastSquaresProjector::standardized_row(std::size_t row, double* raw, double* out) const {
    features_(row, raw);
    for (std::size_t a = 0; a < kept_.size(); ++a)
        out[a] = (raw[static_cast<std::size_t>(kept_[a])] - mean_[a]) / scale_[a];
}

Eigen::VectorXd LeastSquaresProjector::fit(std::span<const double> response) const {
    const auto q = kept_.size();
    Eigen::VectorXd coef = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q + 1));
    std::vector<double> raw(static_cast<std::size_t>(raw_features_)), z(q);
    double wsum = 0.0, wy = 0.0;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q));
    for (std::size_t r = 0; r < rows_; ++r) {
        const double w = weights_[r];
        wsum += w;
        wy += w * response[r];
        if (q == 0) continue;
        standardized_row(r, raw.data(), z.data());
        for (std::size_t a = 0; a < q; ++a) rhs[static_cast<Eigen::Index>(a)] += w * z[a] * response[r];
    }
    coef[0] = wy / wsum;
    if (q > 0) coef.tail(static_cast<Eigen::Index>(q)) = gram_.solve(rhs / wsum);
    return coef;
}

void LeastSquaresProjector::project(std::span<const double> response, std::span<double> out) const {
    const Eigen::VectorXd coef = fit(response);
    const auto q = kept_.size();
    std::vector<double> raw(static_cast<std::size_t>(raw_features_)), z(q);
    for (std::size_t r = 0; r < rows_; ++r) {
        double v = coef[0];
        if (q > 0) {
            standardized_row(r, raw.data(), z.data());
            for (std::size_t a = 0; a < q; ++a) v += coef[static_cast<Eigen::Index>(a + 1)] * z[a];
        }
        out[r] = v;
    }
}

double LeastSquaresProjector::predict(const Eigen::VectorXd& coefficients, const double* raw) const {
    double v = coefficients[0];
    for (std::size_t a = 0; a < kept_.size(); ++a)
        v += coefficients[static_cast<Eigen::Index>(a + 1)] *
             (raw[static_cast<std::size_t>(kept_[a])] - mean_[a]) / scale_[a];
    return v;
}

}  // namespace mrbsdej
