#include "mrbsdej/mean_reflected.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mrbsdej {

PicardConfig compute_picard_window(const DriverSpec& driver, const LossSpec& loss, double horizon,
                                   int steps) {
    if (!(horizon > 0.0) || steps < 1) throw std::invalid_argument("picard window: bad grid");
    const double L = driver.bound_L, lambda = driver.lipschitz_lambda, kappa = loss.kappa();
    PicardConfig cfg;
    cfg.A0 = (3.0 + 2.0 * kappa + 4.0 * lambda * kappa) * L;
    cfg.A = cfg.A0;
    const double denom = L + lambda * cfg.A;
    cfg.delta_A = denom > 0.0 ? std::min(L / denom, horizon) : horizon;
    if (lambda * kappa == 0.0) {
        cfg.h_hat = horizon;
    } else {
        cfg.h_hat = std::min(1.0 / (4.0 * lambda * kappa), cfg.delta_A);
        if (!(cfg.h_hat > 0.0)) cfg.h_hat = std::min(1.0 / (4.0 * lambda * kappa), horizon);
    }
    cfg.q = std::max(1, static_cast<int>(std::ceil(horizon / cfg.h_hat - 1e-12)));
    const double dt = horizon / steps;
    cfg.steps_per_interval =
        std::clamp(static_cast<int>(std::floor(cfg.h_hat / dt + 1e-9)), 1, steps);
    return cfg;
}

std::vector<int> interval_boundaries(int steps, int steps_per_interval) {
    if (steps_per_interval < 1) throw std::invalid_argument("interval length must be >= 1 step");
    std::vector<int> b{steps};
    while (b.back() > 0) b.push_back(std::max(0, b.back() - steps_per_interval));
    std::reverse(b.begin(), b.end());
    return b;
}

namespace {

SolutionTriple empty_solution(const PathEnsemble& e) {
    const int n = e.steps();
    SolutionTriple s;
    s.Y = AdaptedProcess(n, e.size());
    s.U = PredictableField(n, e.size(), e.marks());
    s.f = AdaptedProcess(n, e.size());
    s.K.assign(static_cast<std::size_t>(n) + 1, 0.0);
    s.ell.assign(static_cast<std::size_t>(n) + 1, 0.0);
    s.dK.assign(static_cast<std::size_t>(n), 0.0);
    return s;
}

void finish(SolutionTriple& sol, const LossSpec& loss, const PathEnsemble& e) {
    for (std::size_t k = 0; k < sol.dK.size(); ++k) sol.K[k + 1] = sol.K[k] + sol.dK[k];
    compute_margins(sol, loss, e);
}

}  // namespace

void reflect_interval(const ConditionalExpectation& ce, const DriverSpec& driver,
                      const AdaptedProcess* frozen_y, const LossSpec& loss,
                      std::span<const double> terminal, int k0, int k1, SolutionTriple& out,
                      const ReflectionOptions& opt) {
    const PathEnsemble& e = ce.ensemble();
    if (driver.depends_on_y && !frozen_y)
        throw std::invalid_argument("reflect_interval: driver depends on Y; freeze it first");
    const JumpModel& model = e.model();
    std::vector<double> term(terminal.begin(), terminal.end());
    std::copy(term.begin(), term.end(), out.Y.row(k1).begin());

    BackwardInputs in;
    in.driver = &driver;
    in.frozen_y = frozen_y;
    backward_solve(ce, in, k0, k1, out.Y, out.U, &out.f, opt.solver);

    {
        const SampleCloud c = ce.cloud(k1, out.Y.row(k1));
        const double terminal_gap = l_operator(loss, model.time(k1), c, opt.bisection);
        if (terminal_gap > opt.terminal_tol) {
            std::ostringstream msg;
            msg << "constraint fails at t_" << k1 << " by " << terminal_gap << "; treated as slack";
            out.warnings.add("terminal_infeasible", msg.str());
        }
    }
    double running = 0.0;
    for (int k = k1 - 1; k >= k0; --k) {
        const SampleCloud c = ce.cloud(k, out.Y.row(k));
        const double ell = l_operator(loss, model.time(k), c, opt.bisection);
        out.ell[static_cast<std::size_t>(k)] = ell;
        const double next = running;
        running = std::max(running, ell);
        out.dK[static_cast<std::size_t>(k)] = running - next;
        for (double& v : out.Y.row(k)) v += running;
    }
}

SolutionTriple reflect_constant_driver(const ConditionalExpectation& ce, const DriverSpec& driver,
                                       std::span<const double> terminal, const LossSpec& loss,
                                       const AdaptedProcess* frozen_y, const ReflectionOptions& opt) {
    const PathEnsemble& e = ce.ensemble();
    SolutionTriple sol = empty_solution(e);
    sol.boundaries = {0, e.steps()};
    reflect_interval(ce, driver, frozen_y, loss, terminal, 0, e.steps(), sol, opt);
    sol.picard_log.push_back({0, 1, 0.0, 0.0});
    finish(sol, loss, e);
    return sol;
}

SolutionTriple solve_mean_reflected(const ConditionalExpectation& ce, const DriverSpec& driver,
                                    std::span<const double> terminal, const LossSpec& loss,
                                    const PicardConfig& picard, const ReflectionOptions& opt) {
    const PathEnsemble& e = ce.ensemble();
    const int n = e.steps();
    if (!driver.depends_on_y) return reflect_constant_driver(ce, driver, terminal, loss, nullptr, opt);

    SolutionTriple sol = empty_solution(e);
    sol.boundaries = interval_boundaries(n, picard.steps_per_interval);
    std::copy(terminal.begin(), terminal.end(), sol.Y.row(n).begin());
    AdaptedProcess P(n, e.size());
    std::vector<double> term(e.size());
    const int intervals = static_cast<int>(sol.boundaries.size()) - 1;
    for (int j = 0; j < intervals; ++j) {
        const int k0 = sol.boundaries[static_cast<std::size_t>(intervals - 1 - j)];
        const int k1 = sol.boundaries[static_cast<std::size_t>(intervals - j)];
        const auto row1 = sol.Y.row(k1);
        std::copy(row1.begin(), row1.end(), term.begin());
        for (int k = k0; k <= k1; ++k) std::fill(P.row(k).begin(), P.row(k).end(), 0.0);
        double previous = 0.0;
        for (int it = 1;; ++it) {
            reflect_interval(ce, driver, &P, loss, term, k0, k1, sol, opt);
            double change = 0.0;
            for (int k = k0; k < k1; ++k) {
                const auto y = sol.Y.row(k);
                const auto p = P.row(k);
                for (std::size_t s = 0; s < e.size(); ++s) change = std::max(change, std::abs(y[s] - p[s]));
                std::copy(y.begin(), y.end(), p.begin());
            }
            sol.picard_log.push_back({j, it, change, it > 1 && previous > 0.0 ? change / previous : 0.0});
            previous = change;
            if (change <= picard.tol) break;
            if (it >= picard.max_iters) {
                std::vector<std::string> lines;
                for (const auto& r : sol.picard_log) {
                    std::ostringstream line;
                    line << "interval " << r.interval << " iteration " << r.iteration << " change "
                         << r.change << " ratio " << r.ratio;
                    lines.push_back(line.str());
                }
                std::ostringstream msg;
                msg << "Picard iteration on steps [" << k0 << ", " << k1 << ") did not reach " << picard.tol
                    << " within " << picard.max_iters << " iterations (last change " << change
                    << "); shorten the stitching interval";
                throw NonConvergence(msg.str(), std::move(lines));
            }
        }
    }
    finish(sol, loss, e);
    return sol;
}

void compute_margins(SolutionTriple& sol, const LossSpec& loss, const PathEnsemble& e) {
    const int n = e.steps();
    sol.margin.assign(static_cast<std::size_t>(n) + 1, 0.0);
    sol.margin_se.assign(static_cast<std::size_t>(n) + 1, 0.0);
    const auto w = e.weights();
    std::vector<double> l(e.size());
    for (int k = 0; k <= n; ++k) {
        const double t = e.model().time(k);
        const auto y = sol.Y.row(k);
        double mean = 0.0;
        for (std::size_t s = 0; s < e.size(); ++s) {
            l[s] = loss(t, y[s]);
            mean += w[s] * l[s];
        }
        sol.margin[static_cast<std::size_t>(k)] = mean;
        if (e.kind() == EnsembleKind::monte_carlo && e.size() > 1) {
            double var = 0.0;
            for (std::size_t s = 0; s < e.size(); ++s) var += w[s] * (l[s] - mean) * (l[s] - mean);
            sol.margin_se[static_cast<std::size_t>(k)] = std::sqrt(var / static_cast<double>(e.size() - 1));
        }
    }
}

FlatnessReport flatness_residual(const SolutionTriple& solution, const LossSpec& loss,
                                 const PathEnsemble& ensemble) {
    SolutionTriple probe;
    probe.Y = solution.Y;
    compute_margins(probe, loss, ensemble);
    FlatnessReport r;
    r.min_margin = *std::min_element(probe.margin.begin(), probe.margin.end());
    for (std::size_t k = 0; k + 1 < solution.K.size(); ++k)
        r.residual += std::max(probe.margin[k], 0.0) * (solution.K[k + 1] - solution.K[k]);
    return r;
}

}  // namespace mrbsdej
