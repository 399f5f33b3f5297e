#include "mrbsdej/bsdej_core.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <string>

namespace mrbsdej {

std::vector<double> TerminalSpec::values(const PathEnsemble& ensemble) const {
    std::vector<double> out(ensemble.size());
    for (std::size_t s = 0; s < ensemble.size(); ++s) out[s] = evaluate(ensemble.counts(s, ensemble.steps()));
    return out;
}

ConditionalExpectation::ConditionalExpectation(const PathEnsemble& ensemble, Backend backend,
                                               const RegressionOptions& opt, WarningLog* log)
    : ensemble_(&ensemble), backend_(backend) {
    const int n = ensemble.steps();
    if (backend_ == Backend::exact) {
        const TreeLayout* tree = ensemble.tree();
        if (!tree) throw std::invalid_argument("exact backend needs an enumerated tree ensemble");
        node_weights_.resize(static_cast<std::size_t>(n) + 1);
        for (int k = 0; k <= n; ++k) {
            const std::size_t block = tree->block_size(k);
            auto& nw = node_weights_[static_cast<std::size_t>(k)];
            nw.assign(ensemble.size() / block, 0.0);
            for (std::size_t s = 0; s < ensemble.size(); ++s) nw[s / block] += ensemble.weight(s);
        }
        return;
    }
    if (opt.degree < 1 || opt.degree > 3) throw std::invalid_argument("regression degree must be 1, 2 or 3");
    const int m = ensemble.marks();
    const int raw = polynomial_feature_count(m, opt.degree);
    projectors_.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        FeatureMap features = [&ensemble, k, m, degree = opt.degree](std::size_t s, double* out) {
            const auto c = ensemble.counts(s, k);
            double x[256];
            for (int j = 0; j < m; ++j) x[j] = c[static_cast<std::size_t>(j)];
            polynomial_features(std::span<const double>(x, static_cast<std::size_t>(m)), degree, out);
        };
        projectors_[static_cast<std::size_t>(k)] = std::make_unique<LeastSquaresProjector>(
            ensemble.size(), raw, std::move(features), ensemble.weights(), opt, log,
            "step " + std::to_string(k));
    }
}

ConditionalExpectation::~ConditionalExpectation() = default;
ConditionalExpectation::ConditionalExpectation(ConditionalExpectation&&) noexcept = default;

void ConditionalExpectation::expect(int k, std::span<const double> next, std::span<double> out) const {
    const PathEnsemble& e = *ensemble_;
    if (backend_ == Backend::regression) {
        projectors_.at(static_cast<std::size_t>(k))->project(next, out);
        return;
    }
    const TreeLayout& tree = *e.tree();
    const std::size_t node = tree.block_size(k), child = tree.block_size(k + 1);
    for (std::size_t start = 0; start < e.size(); start += node) {
        double v = 0.0;
        for (std::size_t b = 0; b < tree.branching; ++b)
            v += tree.branch_probabilities[b] * next[start + b * child];
        std::fill(out.begin() + static_cast<std::ptrdiff_t>(start),
                  out.begin() + static_cast<std::ptrdiff_t>(start + node), v);
    }
}

std::vector<double> ConditionalExpectation::expect(int k, std::span<const double> next) const {
    std::vector<double> out(ensemble_->size());
    expect(k, next, out);
    return out;
}

void ConditionalExpectation::extract_u(int k, std::span<const double> next, std::span<double> out,
                                       int coordinate) const {
    const PathEnsemble& e = *ensemble_;
    const int m = e.marks();
    const auto mm = static_cast<std::size_t>(m);
    if (m == 0) return;
    const auto probs = e.model().outcome_probabilities();
    if (coordinate < 0) coordinate = e.coordinate();

    if (backend_ == Backend::exact) {
        const TreeLayout& tree = *e.tree();
        const std::size_t node = tree.block_size(k), child = tree.block_size(k + 1);
        std::vector<double> sum(mm + 1), mass(mm + 1), u(mm);
        for (std::size_t start = 0; start < e.size(); start += node) {
            std::fill(sum.begin(), sum.end(), 0.0);
            std::fill(mass.begin(), mass.end(), 0.0);
            for (std::size_t b = 0; b < tree.branching; ++b) {
                const JumpLabel a = tree.label(b, coordinate);
                sum[a] += tree.branch_probabilities[b] * next[start + b * child];
                mass[a] += tree.branch_probabilities[b];
            }
            const double base = mass[0] > 0.0 ? sum[0] / mass[0] : 0.0;
            for (std::size_t j = 0; j < mm; ++j)
                u[j] = mass[j + 1] > 0.0 ? sum[j + 1] / mass[j + 1] - base : 0.0;
            for (std::size_t s = start; s < start + node; ++s)
                std::copy(u.begin(), u.end(), out.begin() + static_cast<std::ptrdiff_t>(s * mm));
        }
        return;
    }

    // Regression: c_j = E_k[(v - E_k v) dmu_j]; the conditional covariance of the
    // increments is diag(p) - p p^T, whose inverse is diag(1/p) + 1 1^T / p_0.
    const auto& proj = *projectors_.at(static_cast<std::size_t>(k));
    const std::size_t M = e.size();
    std::vector<double> mean(M), r(M), c(M * mm, 0.0);
    proj.project(next, mean);
    for (std::size_t j = 0; j < mm; ++j) {
        if (!(probs[j + 1] > 0.0)) continue;
        for (std::size_t s = 0; s < M; ++s)
            r[s] = (next[s] - mean[s]) * e.model().compensated_increment(e.outcome(s, k), static_cast<int>(j));
        proj.project(r, r);
        for (std::size_t s = 0; s < M; ++s) c[s * mm + j] = r[s];
    }
    for (std::size_t s = 0; s < M; ++s) {
        double total = 0.0;
        for (std::size_t j = 0; j < mm; ++j)
            if (probs[j + 1] > 0.0) total += c[s * mm + j];
        for (std::size_t j = 0; j < mm; ++j)
            out[s * mm + j] = probs[j + 1] > 0.0 ? c[s * mm + j] / probs[j + 1] + total / probs[0] : 0.0;
    }
}

SampleCloud ConditionalExpectation::cloud(int k, std::span<const double> values_k) const {
    SampleCloud cloud;
    if (backend_ == Backend::exact) {
        const std::size_t block = ensemble_->tree()->block_size(k);
        const auto& nw = node_weights_[static_cast<std::size_t>(k)];
        cloud.values.resize(nw.size());
        for (std::size_t i = 0; i < nw.size(); ++i) cloud.values[i] = values_k[i * block];
        cloud.weights = nw;
        return cloud;
    }
    cloud.values.assign(values_k.begin(), values_k.end());
    cloud.weights.assign(ensemble_->weights().begin(), ensemble_->weights().end());
    return cloud;
}

void backward_solve(const ConditionalExpectation& ce, const BackwardInputs& in, int k0, int k1,
                    AdaptedProcess& y, PredictableField& u, AdaptedProcess* f_used,
                    const SolverOptions& opt) {
    const PathEnsemble& e = ce.ensemble();
    const JumpModel& model = e.model();
    const double dt = model.dt();
    const std::size_t M = e.size();
    std::vector<double> expected(M);
    const DriverSpec* driver = in.driver;
    const bool implicit = driver && !in.driver_values && !in.frozen_y && driver->depends_on_y;
    const double lam_dt = driver ? driver->lipschitz_lambda * dt : 0.0;
    const double omega = lam_dt < 1.0 ? 1.0 : 1.0 / (1.0 + lam_dt);

    for (int k = k1 - 1; k >= k0; --k) {
        const auto next = y.row(k + 1);
        ce.expect(k, next, expected);
        ce.extract_u(k, next, u.step(k));
        const double t = model.time(k);
        const double dk = in.k_increments.empty() ? 0.0 : in.k_increments[static_cast<std::size_t>(k)];
        for (std::size_t s = 0; s < M; ++s) {
            const auto us = u.at(k, s);
            double f = 0.0;
            double value;
            if (in.driver_values) {
                f = (*in.driver_values)(k, s);
                value = expected[s] + f * dt + dk;
            } else if (!driver) {
                value = expected[s] + dk;
            } else if (!implicit) {
                f = (*driver)(t, in.frozen_y ? (*in.frozen_y)(k, s) : expected[s], us);
                value = expected[s] + f * dt + dk;
            } else {
                value = expected[s] + (*driver)(t, expected[s], us) * dt + dk;
                int it = 0;
                for (;; ++it) {
                    const double g = expected[s] + (*driver)(t, value, us) * dt + dk;
                    const double updated = (1.0 - omega) * value + omega * g;
                    const double change = std::abs(updated - value);
                    value = updated;
                    if (change <= opt.implicit_tol * (1.0 + std::abs(value))) break;
                    if (it + 1 >= opt.implicit_max_iters) {
                        std::ostringstream msg;
                        msg << "implicit step did not settle at step " << k << ", scenario " << s
                            << " (last change " << change << ")";
                        throw NonConvergence(msg.str(), {msg.str()});
                    }
                }
                f = (*driver)(t, value, us);
            }
            y(k, s) = value;
            if (f_used) (*f_used)(k, s) = f;
        }
    }
}

BsdejSolution solve_bsdej(const ConditionalExpectation& ce, const DriverSpec& driver,
                          std::span<const double> terminal_values, const AdaptedProcess* frozen_y,
                          const SolverOptions& opt) {
    const PathEnsemble& e = ce.ensemble();
    const int n = e.steps();
    if (terminal_values.size() != e.size()) throw std::invalid_argument("solve_bsdej: terminal size mismatch");
    BsdejSolution sol{AdaptedProcess(n, e.size()), PredictableField(n, e.size(), e.marks()),
                      AdaptedProcess(n, e.size())};
    std::copy(terminal_values.begin(), terminal_values.end(), sol.y.row(n).begin());
    BackwardInputs in;
    in.driver = &driver;
    in.frozen_y = frozen_y;
    backward_solve(ce, in, 0, n, sol.y, sol.u, &sol.f, opt);
    return sol;
}

double reconstruction_residual(const PathEnsemble& ensemble, const AdaptedProcess& y,
                               const PredictableField& u, const AdaptedProcess& f,
                               std::span<const double> k_increments, int k0, int k1) {
    const JumpModel& model = ensemble.model();
    const double dt = model.dt();
    if (k1 < 0) k1 = ensemble.steps();
    double worst = 0.0;
    for (int k = k0; k < k1; ++k) {
        const double dk = k_increments.empty() ? 0.0 : k_increments[static_cast<std::size_t>(k)];
        for (std::size_t s = 0; s < ensemble.size(); ++s) {
            double martingale = 0.0;
            const JumpLabel o = ensemble.outcome(s, k);
            for (int j = 0; j < ensemble.marks(); ++j) martingale += u(k, s, j) * model.compensated_increment(o, j);
            worst = std::max(worst, std::abs(y(k + 1, s) - y(k, s) + f(k, s) * dt - martingale + dk));
        }
    }
    return worst;
}

double martingale_residual(const ConditionalExpectation& ce, const AdaptedProcess& y,
                           const AdaptedProcess& f, std::span<const double> k_increments) {
    const PathEnsemble& e = ce.ensemble();
    const double dt = e.model().dt();
    double worst = 0.0;
    std::vector<double> expected(e.size());
    for (int k = 0; k < e.steps(); ++k) {
        ce.expect(k, y.row(k + 1), expected);
        const double dk = k_increments.empty() ? 0.0 : k_increments[static_cast<std::size_t>(k)];
        for (std::size_t s = 0; s < e.size(); ++s)
            worst = std::max(worst, std::abs(expected[s] - y(k, s) + f(k, s) * dt + dk));
    }
    return worst;
}

double adaptedness_violation(const PathEnsemble& ensemble, const AdaptedProcess& process) {
    const TreeLayout* tree = ensemble.tree();
    if (!tree) throw std::invalid_argument("adaptedness check needs a tree ensemble");
    double worst = 0.0;
    for (int k = 0; k <= ensemble.steps(); ++k) {
        const std::size_t block = tree->block_size(k);
        for (std::size_t s = 0; s < ensemble.size(); ++s)
            worst = std::max(worst, std::abs(process(k, s) - process(k, s - s % block)));
    }
    return worst;
}

double predictability_violation(const PathEnsemble& ensemble, const PredictableField& field) {
    const TreeLayout* tree = ensemble.tree();
    if (!tree) throw std::invalid_argument("predictability check needs a tree ensemble");
    double worst = 0.0;
    for (int k = 0; k < ensemble.steps(); ++k) {
        const std::size_t block = tree->block_size(k);
        for (std::size_t s = 0; s < ensemble.size(); ++s)
            for (int j = 0; j < field.marks; ++j)
                worst = std::max(worst, std::abs(field(k, s, j) - field(k, s - s % block, j)));
    }
    return worst;
}

void write_solution_csv(std::ostream& out, const AdaptedProcess& y, const PredictableField& u) {
    out << "scenario,step,y";
    for (int j = 0; j < u.marks; ++j) out << ",u_" << j + 1;
    out << '\n';
    out.precision(17);
    for (std::size_t s = 0; s < y.scenarios; ++s)
        for (int k = 0; k <= y.steps; ++k) {
            out << s << ',' << k << ',' << y(k, s);
            for (int j = 0; j < u.marks; ++j) out << ',' << (k < u.steps ? u(k, s, j) : 0.0);
            out << '\n';
        }
}

}  // namespace mrbsdej
