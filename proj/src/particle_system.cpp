#include "mrbsdej/particle_system.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

namespace mrbsdej {

const PredictableField& ParticleSolution::u(int i, int j) const {
    if (full_u) return U.at(static_cast<std::size_t>(i * particles + j));
    if (i != j) throw std::out_of_range("only diagonal U^{i,i} is stored on this backend");
    return U.at(static_cast<std::size_t>(i));
}

void psi_process(const LossSpec& loss, const JumpModel& model, const std::vector<AdaptedProcess>& y,
                 int k0, int k1, AdaptedProcess& psi, const BisectionOptions& opt) {
    const std::size_t M = y.front().scenarios;
    std::vector<double> cloud(y.size());
    for (int k = k0; k <= k1; ++k) {
        const double t = model.time(k);
        for (std::size_t s = 0; s < M; ++s) {
            for (std::size_t i = 0; i < y.size(); ++i) cloud[i] = y[i](k, s);
            psi(k, s) = empirical_l_operator(loss, t, cloud, opt);
        }
    }
}

AdaptedProcess psi_process(const LossSpec& loss, const JumpModel& model,
                           const std::vector<AdaptedProcess>& y, const BisectionOptions& opt) {
    if (y.empty()) throw std::invalid_argument("psi_process: no particles");
    AdaptedProcess psi(y.front().steps, y.front().scenarios);
    psi_process(loss, model, y, 0, y.front().steps, psi, opt);
    return psi;
}

void snell_envelope(const AdaptedProcess& psi, const ScenarioExpectation& expect, int k0, int k1,
                    AdaptedProcess& S, AdaptedProcess& dK) {
    const std::size_t M = psi.scenarios;
    std::copy(psi.row(k1).begin(), psi.row(k1).end(), S.row(k1).begin());
    std::vector<double> continuation(M);
    for (int k = k1 - 1; k >= k0; --k) {
        expect(k, S.row(k + 1), continuation);
        const auto p = psi.row(k);
        auto s_row = S.row(k);
        auto d_row = dK.row(k);
        for (std::size_t s = 0; s < M; ++s) {
            s_row[s] = std::max(p[s], continuation[s]);
            d_row[s] = s_row[s] - continuation[s];
        }
    }
}

SnellResult snell_envelope(const AdaptedProcess& psi, const ScenarioExpectation& expect) {
    const int n = psi.steps;
    SnellResult r{AdaptedProcess(n, psi.scenarios), AdaptedProcess(n, psi.scenarios),
                  AdaptedProcess(n, psi.scenarios)};
    snell_envelope(psi, expect, 0, n, r.S, r.dK);
    for (int k = 0; k < n; ++k)
        for (std::size_t s = 0; s < psi.scenarios; ++s) r.K(k + 1, s) = r.K(k, s) + r.dK(k, s);
    return r;
}

ScenarioExpectation tree_expectation(const ConditionalExpectation& ce) {
    return [&ce](int k, std::span<const double> next, std::span<double> out) { ce.expect(k, next, out); };
}

namespace {

/// Conditional expectations on the joint filtration for all particles at once.
///
/// Exact: the joint tree. Regression: one projector per step over the stacked
/// (particle, scenario) rows, on polynomials of the particle's own jump counts plus
/// the particle-averaged counts (and their squares) of the scenario.
class JointBackend {
public:
    JointBackend(const MultiEnsemble& multi, const ParticleOptions& opt, WarningLog* log)
        : multi_(multi), opt_(opt), log_(log) {
        const int n = multi.steps(), N = multi.particles(), m = multi.marks();
        const std::size_t M = multi.size();
        if (opt.backend == Backend::exact) {
            if (!multi.joint_tree()) throw std::invalid_argument("exact particle backend needs a joint tree");
            tree_ce_ = std::make_unique<ConditionalExpectation>(multi.particle(0), Backend::exact);
            return;
        }
        if (opt.regression.degree < 1 || opt.regression.degree > 3)
            throw std::invalid_argument("regression degree must be 1, 2 or 3");
        pooled_weights_.resize(static_cast<std::size_t>(N) * M);
        for (int i = 0; i < N; ++i)
            for (std::size_t s = 0; s < M; ++s)
                pooled_weights_[static_cast<std::size_t>(i) * M + s] = multi.weights()[s] / N;
        const int own = polynomial_feature_count(m, opt.regression.degree);
        const int raw = own + 2 * m;
        mean_counts_ = std::make_shared<std::vector<std::vector<double>>>(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) {
            auto& mc = (*mean_counts_)[static_cast<std::size_t>(k)];
            mc.assign(M * static_cast<std::size_t>(m), 0.0);
            for (int i = 0; i < N; ++i)
                for (std::size_t s = 0; s < M; ++s) {
                    const auto c = multi.particle(i).counts(s, k);
                    for (int j = 0; j < m; ++j) mc[s * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)] += c[static_cast<std::size_t>(j)];
                }
            for (double& v : mc) v /= N;
        }
        projectors_.resize(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) {
            FeatureMap features = [&multi, k, m, M, own, degree = opt.regression.degree,
                                   table = mean_counts_](std::size_t row, double* out) {
                const std::size_t i = row / M, s = row % M;
                const auto c = multi.particle(static_cast<int>(i)).counts(s, k);
                double x[256];
                for (int j = 0; j < m; ++j) x[j] = c[static_cast<std::size_t>(j)];
                polynomial_features(std::span<const double>(x, static_cast<std::size_t>(m)), degree, out);
                const double* mc = (*table)[static_cast<std::size_t>(k)].data() + s * static_cast<std::size_t>(m);
                for (int j = 0; j < m; ++j) {
                    out[own + j] = mc[j];
                    out[own + m + j] = mc[j] * mc[j];
                }
            };
            projectors_[static_cast<std::size_t>(k)] = std::make_unique<LeastSquaresProjector>(
                static_cast<std::size_t>(N) * M, raw, std::move(features), pooled_weights_, opt.regression,
                log, "pooled step " + std::to_string(k));
        }
    }

    bool exact() const { return static_cast<bool>(tree_ce_); }

    /// y^i_k = E_k[next^i] over stacked (particle-major) rows.
    void expect_particles(int k, std::span<const double> next, std::span<double> out) const {
        const std::size_t M = multi_.size();
        if (exact()) {
            for (int i = 0; i < multi_.particles(); ++i)
                tree_ce_->expect(k, next.subspan(static_cast<std::size_t>(i) * M, M),
                                 out.subspan(static_cast<std::size_t>(i) * M, M));
            return;
        }
        projectors_[static_cast<std::size_t>(k)]->project(next, out);
    }

    /// Martingale-representation integrands of Y at step k (and the remainder on trees).
    void extract(int k, std::span<const double> next, ParticleSolution& sol) const {
        const int N = multi_.particles(), m = multi_.marks();
        const std::size_t M = multi_.size(), mm = static_cast<std::size_t>(m);
        const JumpModel& model = multi_.model();
        if (exact()) {
            std::vector<double> mean(M);
            for (int i = 0; i < N; ++i) {
                const auto v = next.subspan(static_cast<std::size_t>(i) * M, M);
                tree_ce_->expect(k, v, mean);
                auto r = sol.remainder[static_cast<std::size_t>(i)].row(k);
                for (std::size_t s = 0; s < M; ++s) r[s] = v[s] - mean[s];
                for (int j = 0; j < N; ++j) {
                    PredictableField& u = sol.U[static_cast<std::size_t>(i * N + j)];
                    const PathEnsemble& pj = multi_.particle(j);
                    tree_ce_->extract_u(k, v, u.step(k), pj.coordinate());
                    for (std::size_t s = 0; s < M; ++s) {
                        const JumpLabel o = pj.outcome(s, k);
                        for (int a = 0; a < m; ++a) r[s] -= u(k, s, a) * model.compensated_increment(o, a);
                    }
                }
            }
            return;
        }
        if (m == 0) return;
        const auto probs = model.outcome_probabilities();
        const auto& proj = *projectors_[static_cast<std::size_t>(k)];
        const std::size_t rows = static_cast<std::size_t>(N) * M;
        std::vector<double> mean(rows), r(rows), c(rows * mm, 0.0);
        proj.project(next, mean);
        for (std::size_t j = 0; j < mm; ++j) {
            if (!(probs[j + 1] > 0.0)) continue;
            for (std::size_t row = 0; row < rows; ++row) {
                const JumpLabel o = multi_.particle(static_cast<int>(row / M)).outcome(row % M, k);
                r[row] = (next[row] - mean[row]) * model.compensated_increment(o, static_cast<int>(j));
            }
            proj.project(r, r);
            for (std::size_t row = 0; row < rows; ++row) c[row * mm + j] = r[row];
        }
        for (std::size_t row = 0; row < rows; ++row) {
            double total = 0.0;
            for (std::size_t j = 0; j < mm; ++j)
                if (probs[j + 1] > 0.0) total += c[row * mm + j];
            PredictableField& u = sol.U[row / M];
            const std::size_t s = row % M;
            for (std::size_t j = 0; j < mm; ++j)
                u(k, s, static_cast<int>(j)) =
                    probs[j + 1] > 0.0 ? c[row * mm + j] / probs[j + 1] + total / probs[0] : 0.0;
        }
    }

    /// Conditional expectation for the Snell recursion on [k0, k1).
    ScenarioExpectation snell_expectation(const ParticleSolution& sol, const LossSpec& loss, int k0, int k1) {
        if (exact()) return tree_expectation(*tree_ce_);
        const int N = multi_.particles();
        const std::size_t M = multi_.size();
        const JumpModel& model = multi_.model();
        const bool extended = opt_.snell_basis == SnellBasis::extended;
        const int raw = extended ? 5 : 3;
        snell_features_.assign(static_cast<std::size_t>(k1 - k0), {});
        snell_projectors_.clear();
        snell_projectors_.resize(static_cast<std::size_t>(k1 - k0));
        for (int k = k0; k < k1; ++k) {
            auto& table = snell_features_[static_cast<std::size_t>(k - k0)];
            table.assign(M * static_cast<std::size_t>(raw), 0.0);
            const double t = model.time(k);
            for (std::size_t s = 0; s < M; ++s) {
                double my = 0.0, ml = 0.0, my2 = 0.0;
                for (int i = 0; i < N; ++i) {
                    // Y holds the unreflected y on [k0, k1) while the Snell step runs.
                    const double v = sol.Y[static_cast<std::size_t>(i)](k, s);
                    my += v;
                    ml += loss(t, v);
                    my2 += v * v;
                }
                double* row = table.data() + s * static_cast<std::size_t>(raw);
                row[0] = my / N;
                row[1] = ml / N;
                row[2] = my2 / N;
                if (extended) {
                    row[3] = sol.psi(k, s);
                    row[4] = row[0] * row[0];
                }
            }
            const double* data = table.data();
            FeatureMap features = [data, raw](std::size_t s, double* out) {
                std::copy(data + s * static_cast<std::size_t>(raw), data + (s + 1) * static_cast<std::size_t>(raw), out);
            };
            snell_projectors_[static_cast<std::size_t>(k - k0)] = std::make_unique<LeastSquaresProjector>(
                M, raw, std::move(features), multi_.weights(), opt_.regression, log_,
                "snell step " + std::to_string(k));
        }
        return [this, k0](int k, std::span<const double> next, std::span<double> out) {
            snell_projectors_[static_cast<std::size_t>(k - k0)]->project(next, out);
            // S >= psi >= 0, so its conditional expectation is too; a negative fit would
            // otherwise create dK where the constraint is slack.
            for (double& v : out) v = std::max(v, 0.0);
        };
    }

private:
    const MultiEnsemble& multi_;
    ParticleOptions opt_;
    WarningLog* log_;
    std::unique_ptr<ConditionalExpectation> tree_ce_;
    std::vector<double> pooled_weights_;
    std::shared_ptr<std::vector<std::vector<double>>> mean_counts_;
    std::vector<std::unique_ptr<LeastSquaresProjector>> projectors_;
    std::vector<std::vector<double>> snell_features_;
    std::vector<std::unique_ptr<LeastSquaresProjector>> snell_projectors_;
};

ParticleSolution empty_particle_solution(const MultiEnsemble& multi, const ParticleOptions& opt) {
    const int n = multi.steps(), N = multi.particles(), m = multi.marks();
    const std::size_t M = multi.size();
    ParticleSolution sol;
    sol.particles = N;
    sol.steps = n;
    sol.scenarios = M;
    sol.full_u = opt.backend == Backend::exact;
    sol.Y.assign(static_cast<std::size_t>(N), AdaptedProcess(n, M));
    sol.F.assign(static_cast<std::size_t>(N), AdaptedProcess(n, M));
    sol.U.assign(static_cast<std::size_t>(sol.full_u ? N * N : N), PredictableField(n, M, m));
    if (sol.full_u) sol.remainder.assign(static_cast<std::size_t>(N), AdaptedProcess(n, M));
    sol.psi = AdaptedProcess(n, M);
    sol.S = AdaptedProcess(n, M);
    sol.K = AdaptedProcess(n, M);
    sol.dK = AdaptedProcess(n, M);
    return sol;
}

void set_terminal(ParticleSolution& sol, const MultiEnsemble& multi, const TerminalSpec& terminal) {
    for (int i = 0; i < multi.particles(); ++i) {
        const auto xi = terminal.values(multi.particle(i));
        std::copy(xi.begin(), xi.end(), sol.Y[static_cast<std::size_t>(i)].row(multi.steps()).begin());
    }
}

/// One constant-driver sweep on [k0, k1) with sol.F fixed and sol.Y row k1 holding the
/// terminal values: y^i, psi, Snell envelope, Y^i = y^i + S, then U.
void sweep(JointBackend& backend, const MultiEnsemble& multi, const LossSpec& loss,
           const ParticleOptions& opt, int k0, int k1, ParticleSolution& sol) {
    const int N = multi.particles();
    const std::size_t M = multi.size(), rows = static_cast<std::size_t>(N) * M;
    const JumpModel& model = multi.model();
    const double dt = model.dt();
    std::vector<double> next(rows), expected(rows);

    for (int k = k1 - 1; k >= k0; --k) {
        for (int i = 0; i < N; ++i) {
            const auto src = sol.Y[static_cast<std::size_t>(i)].row(k + 1);
            std::copy(src.begin(), src.end(), next.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * M));
        }
        backend.expect_particles(k, next, expected);
        for (int i = 0; i < N; ++i) {
            auto y = sol.Y[static_cast<std::size_t>(i)].row(k);
            const auto f = sol.F[static_cast<std::size_t>(i)].row(k);
            for (std::size_t s = 0; s < M; ++s) y[s] = expected[static_cast<std::size_t>(i) * M + s] + f[s] * dt;
        }
    }

    psi_process(loss, model, sol.Y, k0, k1, sol.psi, opt.bisection);
    if (k1 == multi.steps()) {
        sol.terminal_psi_max = 0.0;
        sol.terminal_infeasible = 0;
        for (double p : sol.psi.row(k1)) {
            sol.terminal_psi_max = std::max(sol.terminal_psi_max, p);
            sol.terminal_infeasible += p > 0.0;
        }
    }
    const ScenarioExpectation expect = backend.snell_expectation(sol, loss, k0, k1);
    snell_envelope(sol.psi, expect, k0, k1, sol.S, sol.dK);
    for (int i = 0; i < N; ++i)
        for (int k = k0; k <= k1; ++k) {
            auto y = sol.Y[static_cast<std::size_t>(i)].row(k);
            const auto s_row = sol.S.row(k);
            for (std::size_t s = 0; s < M; ++s) y[s] += s_row[s];
        }

    for (int k = k1 - 1; k >= k0; --k) {
        for (int i = 0; i < N; ++i) {
            const auto src = sol.Y[static_cast<std::size_t>(i)].row(k + 1);
            std::copy(src.begin(), src.end(), next.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * M));
        }
        backend.extract(k, next, sol);
    }
}

void finish(ParticleSolution& sol, const MultiEnsemble& multi, WarningLog* log) {
    for (int k = 0; k < sol.steps; ++k)
        for (std::size_t s = 0; s < sol.scenarios; ++s) sol.K(k + 1, s) = sol.K(k, s) + sol.dK(k, s);
    if (sol.terminal_infeasible > 0) {
        std::ostringstream msg;
        msg << sol.terminal_infeasible << " of " << multi.size()
            << " scenarios violate the empirical terminal constraint; largest psi_T = " << sol.terminal_psi_max;
        sol.warnings.add("terminal_infeasible", msg.str());
    }
    if (log)
        for (const auto& w : log->entries) sol.warnings.entries.push_back(w);
}

}  // namespace

ParticleSolution solve_particles_frozen(const MultiEnsemble& multi,
                                        const std::vector<AdaptedProcess>& driver_values,
                                        const TerminalSpec& terminal, const LossSpec& loss,
                                        const ParticleOptions& opt) {
    if (driver_values.size() != static_cast<std::size_t>(multi.particles()))
        throw std::invalid_argument("solve_particles_frozen: one driver process per particle");
    WarningLog log;
    JointBackend backend(multi, opt, &log);
    ParticleSolution sol = empty_particle_solution(multi, opt);
    sol.F = driver_values;
    set_terminal(sol, multi, terminal);
    sol.boundaries = {0, multi.steps()};
    sweep(backend, multi, loss, opt, 0, multi.steps(), sol);
    sol.picard_log.push_back({0, 1, 0.0, 0.0});
    finish(sol, multi, &log);
    return sol;
}

ParticleSolution solve_particles_constant(const MultiEnsemble& multi, const DriverSpec& driver,
                                          const TerminalSpec& terminal, const LossSpec& loss,
                                          const ParticleOptions& opt, WarningLog* extra_log) {
    if (driver.depends_on_y || driver.depends_on_u)
        throw std::invalid_argument("solve_particles_constant: driver depends on (y, u); use solve_particles");
    const int n = multi.steps();
    const std::vector<double> zeros(static_cast<std::size_t>(multi.marks()), 0.0);
    std::vector<AdaptedProcess> F(static_cast<std::size_t>(multi.particles()), AdaptedProcess(n, multi.size()));
    for (auto& f : F)
        for (int k = 0; k < n; ++k) {
            const double v = driver(multi.model().time(k), 0.0, zeros);
            std::fill(f.row(k).begin(), f.row(k).end(), v);
        }
    ParticleSolution sol = solve_particles_frozen(multi, F, terminal, loss, opt);
    if (extra_log)
        for (const auto& w : extra_log->entries) sol.warnings.entries.push_back(w);
    return sol;
}

ParticleSolution solve_particles(const MultiEnsemble& multi, const DriverSpec& driver,
                                 const TerminalSpec& terminal, const LossSpec& loss,
                                 const PicardConfig& picard, const ParticleOptions& opt) {
    if (!driver.depends_on_y && !driver.depends_on_u)
        return solve_particles_constant(multi, driver, terminal, loss, opt);
    const int n = multi.steps(), N = multi.particles(), m = multi.marks();
    const std::size_t M = multi.size();
    const JumpModel& model = multi.model();
    WarningLog log;
    JointBackend backend(multi, opt, &log);
    ParticleSolution sol = empty_particle_solution(multi, opt);
    set_terminal(sol, multi, terminal);
    sol.boundaries = opt.stitch ? interval_boundaries(n, picard.steps_per_interval) : std::vector<int>{0, n};

    std::vector<AdaptedProcess> P(static_cast<std::size_t>(N), AdaptedProcess(n, M));
    std::vector<PredictableField> Q(static_cast<std::size_t>(N), PredictableField(n, M, m));
    std::vector<std::vector<double>> terminal_rows(static_cast<std::size_t>(N));
    auto diag = [&](int i) -> PredictableField& {
        return sol.U[static_cast<std::size_t>(sol.full_u ? i * N + i : i)];
    };

    const int intervals = static_cast<int>(sol.boundaries.size()) - 1;
    for (int j = 0; j < intervals; ++j) {
        const int k0 = sol.boundaries[static_cast<std::size_t>(intervals - 1 - j)];
        const int k1 = sol.boundaries[static_cast<std::size_t>(intervals - j)];
        for (int i = 0; i < N; ++i) {
            const auto row = sol.Y[static_cast<std::size_t>(i)].row(k1);
            terminal_rows[static_cast<std::size_t>(i)].assign(row.begin(), row.end());
            for (int k = k0; k <= k1; ++k) std::fill(P[static_cast<std::size_t>(i)].row(k).begin(), P[static_cast<std::size_t>(i)].row(k).end(), 0.0);
            for (int k = k0; k < k1; ++k) std::fill(Q[static_cast<std::size_t>(i)].step(k).begin(), Q[static_cast<std::size_t>(i)].step(k).end(), 0.0);
        }
        double previous = 0.0;
        for (int it = 1;; ++it) {
            for (int i = 0; i < N; ++i) {
                const auto ii = static_cast<std::size_t>(i);
                for (int k = k0; k < k1; ++k) {
                    const double t = model.time(k);
                    for (std::size_t s = 0; s < M; ++s) sol.F[ii](k, s) = driver(t, P[ii](k, s), Q[ii].at(k, s));
                }
                std::copy(terminal_rows[ii].begin(), terminal_rows[ii].end(), sol.Y[ii].row(k1).begin());
            }
            sweep(backend, multi, loss, opt, k0, k1, sol);
            double change = 0.0;
            for (int i = 0; i < N; ++i) {
                const auto ii = static_cast<std::size_t>(i);
                for (int k = k0; k < k1; ++k) {
                    auto p = P[ii].row(k);
                    const auto y = sol.Y[ii].row(k);
                    for (std::size_t s = 0; s < M; ++s) change = std::max(change, std::abs(y[s] - p[s]));
                    std::copy(y.begin(), y.end(), p.begin());
                    if (driver.depends_on_u) {
                        auto q = Q[ii].step(k);
                        const auto u = diag(i).step(k);
                        for (std::size_t x = 0; x < q.size(); ++x) change = std::max(change, std::abs(u[x] - q[x]));
                        std::copy(u.begin(), u.end(), q.begin());
                    }
                }
            }
            sol.picard_log.push_back({j, it, change, it > 1 && previous > 0.0 ? change / previous : 0.0});
            previous = change;
            if (change <= picard.tol) break;
            if (it >= picard.max_iters) {
                std::vector<std::string> lines;
                for (const auto& r : sol.picard_log) {
                    std::ostringstream line;
                    line << "interval " << r.interval << " iteration " << r.iteration << " change " << r.change
                         << " ratio " << r.ratio;
                    lines.push_back(line.str());
                }
                std::ostringstream msg;
                msg << "particle Picard iteration on steps [" << k0 << ", " << k1 << ") did not reach "
                    << picard.tol << " within " << picard.max_iters
                    << " iterations; use shorter stitching intervals";
                throw NonConvergence(msg.str(), std::move(lines));
            }
        }
    }
    finish(sol, multi, &log);
    return sol;
}

SkorokhodReport discrete_skorokhod_residual(const ParticleSolution& sol, const LossSpec& loss,
                                            const MultiEnsemble& multi) {
    const JumpModel& model = multi.model();
    const auto w = multi.weights();
    SkorokhodReport rep;
    rep.min_margin = std::numeric_limits<double>::infinity();
    std::vector<double> per(sol.scenarios, 0.0);
    for (int k = 0; k <= sol.steps; ++k) {
        const double t = model.time(k);
        for (std::size_t s = 0; s < sol.scenarios; ++s) {
            double mean = 0.0;
            for (int i = 0; i < sol.particles; ++i) mean += loss(t, sol.Y[static_cast<std::size_t>(i)](k, s));
            mean /= sol.particles;
            rep.min_margin = std::min(rep.min_margin, mean);
            if (k < sol.steps) per[s] += std::max(mean, 0.0) * sol.dK(k, s);
        }
    }
    double mean = 0.0;
    for (std::size_t s = 0; s < sol.scenarios; ++s) mean += w[s] * per[s];
    rep.residual = mean;
    if (multi.kind() == EnsembleKind::monte_carlo && sol.scenarios > 1) {
        double var = 0.0;
        for (std::size_t s = 0; s < sol.scenarios; ++s) var += w[s] * (per[s] - mean) * (per[s] - mean);
        rep.residual_se = std::sqrt(var / static_cast<double>(sol.scenarios - 1));
    }
    return rep;
}

double particle_reconstruction_residual(const ParticleSolution& sol, const MultiEnsemble& multi) {
    const JumpModel& model = multi.model();
    const double dt = model.dt();
    const int N = sol.particles, m = multi.marks();
    double worst = 0.0;
    for (int i = 0; i < N; ++i)
        for (int k = 0; k < sol.steps; ++k)
            for (std::size_t s = 0; s < sol.scenarios; ++s) {
                const auto ii = static_cast<std::size_t>(i);
                double mart = 0.0;
                for (int j = 0; j < N; ++j) {
                    if (!sol.full_u && j != i) continue;
                    const PredictableField& u = sol.u(i, j);
                    const JumpLabel o = multi.particle(j).outcome(s, k);
                    for (int a = 0; a < m; ++a) mart += u(k, s, a) * model.compensated_increment(o, a);
                }
                if (!sol.remainder.empty()) mart += sol.remainder[ii](k, s);
                const double r = sol.Y[ii](k + 1, s) - sol.Y[ii](k, s) + sol.F[ii](k, s) * dt - mart + sol.dK(k, s);
                worst = std::max(worst, std::abs(r));
            }
    return worst;
}

}  // namespace mrbsdej
