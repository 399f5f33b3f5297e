#include "mrbsdej/chaos_lab.hpp"

#include "mrbsdej/rng.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <thread>

namespace mrbsdej {

LimitSolution solve_limit(const Problem& problem, const LimitOptions& opt) {
    LimitSolution limit;
    try {
        limit.ensemble = std::make_unique<PathEnsemble>(build_exact_tree(problem.model, opt.enumeration_cap));
        limit.ce = std::make_unique<ConditionalExpectation>(*limit.ensemble, Backend::exact);
    } catch (const EnumerationCapExceeded&) {
        limit.ensemble = std::make_unique<PathEnsemble>(sample_paths(problem.model, opt.mc_scenarios, opt.seed));
        limit.ce = std::make_unique<ConditionalExpectation>(*limit.ensemble, Backend::regression, opt.regression,
                                                            &limit.warnings);
    }
    const PicardConfig picard = opt.picard ? *opt.picard
                                           : compute_picard_window(problem.driver, problem.loss,
                                                                   problem.model.horizon(), problem.model.steps());
    const auto xi = problem.terminal.values(*limit.ensemble);
    limit.solution = solve_mean_reflected(*limit.ce, problem.driver, xi, problem.loss, picard, opt.reflection);
    return limit;
}

namespace {

void check_grid(const LimitSolution& limit, const MultiEnsemble& multi) {
    const JumpModel& a = limit.ensemble->model();
    const JumpModel& b = multi.model();
    if (a.steps() != b.steps() || a.horizon() != b.horizon() ||
        !std::equal(a.intensities().begin(), a.intensities().end(), b.intensities().begin(), b.intensities().end()))
        throw std::invalid_argument("reference: limit and particle system live on different grids or models");
}

ReferenceCopies empty_reference(const LimitSolution& limit, const MultiEnsemble& multi) {
    const int n = multi.steps(), N = multi.particles();
    ReferenceCopies ref;
    ref.Y.assign(static_cast<std::size_t>(N), AdaptedProcess(n, multi.size()));
    ref.F.assign(static_cast<std::size_t>(N), AdaptedProcess(n, multi.size()));
    ref.U.assign(static_cast<std::size_t>(N), PredictableField(n, multi.size(), multi.marks()));
    ref.K = limit.solution.K;
    ref.dK = limit.solution.dK;
    return ref;
}

}  // namespace

ReferenceCopies build_reference(const LimitSolution& limit, const Problem& problem, const MultiEnsemble& multi,
                                const RegressionOptions& regression) {
    check_grid(limit, multi);
    if (!limit.exact()) return build_reference_rerun(limit, problem, multi, Backend::regression, regression);
    ReferenceCopies ref = empty_reference(limit, multi);
    const int n = multi.steps(), m = multi.marks();
    const std::size_t base = static_cast<std::size_t>(m) + 1;
    const SolutionTriple& lim = limit.solution;
    for (int i = 0; i < multi.particles(); ++i) {
        const PathEnsemble& p = multi.particle(i);
        const auto ii = static_cast<std::size_t>(i);
        for (std::size_t s = 0; s < multi.size(); ++s) {
            std::size_t idx = 0;
            for (int k = 0; k < n; ++k) idx = idx * base + p.outcome(s, k);
            for (int k = 0; k <= n; ++k) ref.Y[ii](k, s) = lim.Y(k, idx);
            for (int k = 0; k < n; ++k) {
                ref.F[ii](k, s) = lim.f(k, idx);
                for (int j = 0; j < m; ++j) ref.U[ii](k, s, j) = lim.U(k, idx, j);
            }
        }
    }
    return ref;
}

ReferenceCopies build_reference_rerun(const LimitSolution& limit, const Problem& problem,
                                      const MultiEnsemble& multi, Backend backend,
                                      const RegressionOptions& regression) {
    check_grid(limit, multi);
    ReferenceCopies ref = empty_reference(limit, multi);
    const int n = multi.steps(), m = multi.marks(), N = multi.particles();
    const std::size_t M = multi.size();
    BackwardInputs in;
    in.driver = &problem.driver;
    in.k_increments = limit.solution.dK;

    if (backend == Backend::exact) {
        if (!limit.exact()) throw std::invalid_argument("exact re-run needs an exact limit");
        const PathEnsemble& tree = *limit.ensemble;
        AdaptedProcess y(n, tree.size());
        PredictableField u(n, tree.size(), m);
        AdaptedProcess f(n, tree.size());
        const auto xi = problem.terminal.values(tree);
        std::copy(xi.begin(), xi.end(), y.row(n).begin());
        backward_solve(*limit.ce, in, 0, n, y, u, &f);
        const std::size_t base = static_cast<std::size_t>(m) + 1;
        for (int i = 0; i < N; ++i) {
            const PathEnsemble& p = multi.particle(i);
            const auto ii = static_cast<std::size_t>(i);
            for (std::size_t s = 0; s < M; ++s) {
                std::size_t idx = 0;
                for (int k = 0; k < n; ++k) idx = idx * base + p.outcome(s, k);
                for (int k = 0; k <= n; ++k) ref.Y[ii](k, s) = y(k, idx);
                for (int k = 0; k < n; ++k) {
                    ref.F[ii](k, s) = f(k, idx);
                    for (int j = 0; j < m; ++j) ref.U[ii](k, s, j) = u(k, idx, j);
                }
            }
        }
        return ref;
    }

    // Pool all particle paths into one ensemble; each copy only sees its own driver.
    std::vector<JumpLabel> outcomes;
    outcomes.reserve(static_cast<std::size_t>(N) * M * static_cast<std::size_t>(n));
    std::vector<double> weights;
    weights.reserve(static_cast<std::size_t>(N) * M);
    for (int i = 0; i < N; ++i)
        for (std::size_t s = 0; s < M; ++s) {
            const auto path = multi.particle(i).path(s);
            outcomes.insert(outcomes.end(), path.begin(), path.end());
            weights.push_back(multi.weights()[s] / N);
        }
    PathEnsemble pooled(multi.model(), EnsembleKind::monte_carlo, std::move(outcomes), std::move(weights), 0);
    WarningLog log;
    ConditionalExpectation ce(pooled, Backend::regression, regression, &log);
    AdaptedProcess y(n, pooled.size());
    PredictableField u(n, pooled.size(), m);
    AdaptedProcess f(n, pooled.size());
    const auto xi = problem.terminal.values(pooled);
    std::copy(xi.begin(), xi.end(), y.row(n).begin());
    backward_solve(ce, in, 0, n, y, u, &f);
    for (int i = 0; i < N; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        for (std::size_t s = 0; s < M; ++s) {
            const std::size_t row = ii * M + s;
            for (int k = 0; k <= n; ++k) ref.Y[ii](k, s) = y(k, row);
            for (int k = 0; k < n; ++k) {
                ref.F[ii](k, s) = f(k, row);
                for (int j = 0; j < m; ++j) ref.U[ii](k, s, j) = u(k, row, j);
            }
        }
    }
    return ref;
}

ChaosErrors chaos_errors(const ParticleSolution& sol, const ReferenceCopies& ref, const MultiEnsemble& multi) {
    const int n = sol.steps, N = sol.particles, m = multi.marks();
    const std::size_t M = sol.scenarios;
    const JumpModel& model = multi.model();
    const double dt = model.dt();
    const auto w = multi.weights();
    const auto nu = model.intensities();
    ChaosErrors e;
    double ey = 0.0, eu = 0.0, ei = 0.0, ek = 0.0;
    for (std::size_t s = 0; s < M; ++s) {
        double sup_k = 0.0;
        for (int k = 0; k <= n; ++k) sup_k = std::max(sup_k, std::abs(sol.K(k, s) - ref.K[static_cast<std::size_t>(k)]));
        ek += w[s] * sup_k * sup_k;
    }
    for (int i = 0; i < N; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        const AdaptedProcess& Y = sol.Y[ii];
        const AdaptedProcess& Yb = ref.Y[ii];
        double py = 0.0, pu = 0.0, pi = 0.0;
        for (std::size_t s = 0; s < M; ++s) {
            double sup_y = 0.0, sum_m = 0.0, sum_i = 0.0;
            for (int k = 0; k <= n; ++k) sup_y = std::max(sup_y, std::abs(Y(k, s) - Yb(k, s)));
            for (int k = 0; k < n; ++k) {
                const double dm = Y(k + 1, s) - Y(k, s) + sol.F[ii](k, s) * dt + sol.dK(k, s);
                const double dmb = Yb(k + 1, s) - Yb(k, s) + ref.F[ii](k, s) * dt + ref.dK[static_cast<std::size_t>(k)];
                sum_m += (dm - dmb) * (dm - dmb);
                if (sol.full_u)
                    for (int j = 0; j < N; ++j) {
                        const PredictableField& u = sol.u(i, j);
                        for (int a = 0; a < m; ++a) {
                            const double d = u(k, s, a) - (i == j ? ref.U[ii](k, s, a) : 0.0);
                            sum_i += nu[static_cast<std::size_t>(a)] * d * d * dt;
                        }
                    }
            }
            py += w[s] * sup_y * sup_y;
            pu += w[s] * sum_m;
            pi += w[s] * sum_i;
        }
        ey += py;
        eu += pu;
        ei += pi;
    }
    e.err_Y = ey / N;
    e.err_U = eu / N;
    e.err_U_integrand = sol.full_u ? ei / N : std::numeric_limits<double>::quiet_NaN();
    e.err_K = ek;
    return e;
}

SlopeFit fit_log_slope(const std::vector<double>& x, const std::vector<double>& mean,
                       const std::vector<double>& se) {
    SlopeFit fit;
    std::vector<double> lx, ly, w;
    const bool weighted = !se.empty();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(mean[i] > 0.0) || !std::isfinite(mean[i])) continue;
        double wi = 1.0;
        if (weighted) {
            if (!(se[i] > 0.0)) continue;
            wi = (mean[i] / se[i]) * (mean[i] / se[i]);
        }
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(mean[i]));
        w.push_back(wi);
    }
    fit.points = static_cast<int>(lx.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (fit.points < 2) {
        fit.slope = fit.intercept = fit.se = fit.half_width = nan;
        return fit;
    }
    double sw = 0, sx = 0, sy = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sw += w[i];
        sx += w[i] * lx[i];
        sy += w[i] * ly[i];
    }
    const double mx = sx / sw, my = sy / sw;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += w[i] * (lx[i] - mx) * (lx[i] - mx);
        sxy += w[i] * (lx[i] - mx) * (ly[i] - my);
    }
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    if (fit.points < 3) {
        fit.se = fit.half_width = fit.chi2_red = nan;
        return fit;
    }
    double chi2 = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        const double r = ly[i] - fit.intercept - fit.slope * lx[i];
        chi2 += w[i] * r * r;
    }
    const int dof = fit.points - 2;
    fit.chi2_red = chi2 / dof;
    const double scale = weighted ? std::max(1.0, fit.chi2_red) : fit.chi2_red;
    fit.se = std::sqrt(scale / sxx);
    const boost::math::students_t dist(dof);
    fit.half_width = boost::math::quantile(boost::math::complement(dist, 0.025)) * fit.se;
    return fit;
}

std::uint64_t job_seed(std::uint64_t master_seed, int N, int replicate) {
    return counter_hash(master_seed, static_cast<std::uint64_t>(N), static_cast<std::uint64_t>(replicate),
                        0xC4A05ULL);
}

RateReport rate_sweep(const Problem& problem, const LimitSolution& limit, const SweepConfig& cfg,
                      const std::function<void(const RunRecord&)>& progress) {
    if (cfg.N_values.size() < 4) throw std::invalid_argument("rate sweep needs at least 4 distinct N values");
    {
        std::vector<int> sorted = cfg.N_values;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end() || sorted.front() < 1)
            throw std::invalid_argument("rate sweep N values must be distinct and positive");
    }
    if (cfg.seeds < 2) throw std::invalid_argument("rate sweep needs at least 2 seeds per N");
    const auto t0 = std::chrono::steady_clock::now();
    RateReport report;
    report.N_values = cfg.N_values;
    report.limit_K_T = limit.solution.K.back();
    const std::size_t jobs_total = cfg.N_values.size() * static_cast<std::size_t>(cfg.seeds);
    report.runs.resize(jobs_total);
    std::atomic<std::size_t> next{0};
    std::mutex progress_mutex;

    auto worker = [&]() {
        for (;;) {
            const std::size_t id = next.fetch_add(1);
            if (id >= jobs_total) return;
            RunRecord rec;
            rec.N = cfg.N_values[id / static_cast<std::size_t>(cfg.seeds)];
            rec.seed_index = static_cast<int>(id % static_cast<std::size_t>(cfg.seeds));
            rec.seed = job_seed(cfg.master_seed, rec.N, rec.seed_index);
            const auto start = std::chrono::steady_clock::now();
            try {
                const MultiEnsemble multi = sample_particles(problem.model, rec.N, cfg.scenarios, rec.seed);
                const ParticleSolution sol =
                    solve_particles(multi, problem.driver, problem.terminal, problem.loss, cfg.picard, cfg.particle);
                const ReferenceCopies ref = build_reference(limit, problem, multi, cfg.particle.regression);
                rec.errors = chaos_errors(sol, ref, multi);
                const SkorokhodReport sk = discrete_skorokhod_residual(sol, problem.loss, multi);
                rec.skorokhod = sk.residual;
                rec.skorokhod_se = sk.residual_se;
                rec.min_margin = sk.min_margin;
                rec.picard_iterations = static_cast<int>(sol.picard_log.size());
            } catch (const std::exception& ex) {
                rec.ok = false;
                rec.message = ex.what();
            }
            rec.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            report.runs[id] = rec;
            if (progress) {
                std::lock_guard<std::mutex> lock(progress_mutex);
                progress(rec);
            }
        }
    };
    const int threads = std::max(1, cfg.jobs);
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    for (const auto& r : report.runs) report.failures += !r.ok;
    if (report.failures > cfg.max_failure_fraction * static_cast<double>(jobs_total))
        throw std::runtime_error("rate sweep: " + std::to_string(report.failures) + " of " +
                                 std::to_string(jobs_total) + " runs failed");

    std::vector<double> xs;
    auto summarize = [&](MetricSummary& summary, double ChaosErrors::*field) {
        for (int N : cfg.N_values) {
            std::vector<double> v;
            for (const auto& r : report.runs)
                if (r.ok && r.N == N) v.push_back(r.errors.*field);
            double mean = 0.0, var = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(std::max<std::size_t>(v.size(), 1));
            for (double x : v) var += (x - mean) * (x - mean);
            const double se = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()))
                                           : std::numeric_limits<double>::quiet_NaN();
            summary.mean.push_back(mean);
            summary.se.push_back(se);
        }
        for (std::size_t i = 0; i + 1 < summary.mean.size(); ++i) summary.inversions += summary.mean[i + 1] > summary.mean[i];
        summary.fit = fit_log_slope(xs, summary.mean, summary.se);
    };
    for (int N : cfg.N_values) {
        xs.push_back(N);
        int c = 0;
        for (const auto& r : report.runs) c += r.ok && r.N == N;
        report.replicates.push_back(c);
    }
    summarize(report.err_Y, &ChaosErrors::err_Y);
    summarize(report.err_U, &ChaosErrors::err_U);
    summarize(report.err_K, &ChaosErrors::err_K);
    report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

void write_rate_csv(std::ostream& out, const RateReport& report) {
    out << "N,seed,err_Y,err_U,err_K,runtime_s,ok,skorokhod,skorokhod_se,min_margin,picard_iterations\n";
    out.precision(10);
    for (const auto& r : report.runs)
        out << r.N << ',' << r.seed << ',' << r.errors.err_Y << ',' << r.errors.err_U << ',' << r.errors.err_K << ','
            << r.runtime_s << ',' << (r.ok ? 1 : 0) << ',' << r.skorokhod << ',' << r.skorokhod_se << ','
            << r.min_margin << ',' << r.picard_iterations << '\n';
}

RegularityReport regularity_probe(const std::function<Problem(int steps)>& make_problem, int base_steps,
                                  int refinements, const LimitOptions& opt) {
    if (base_steps < 1 || refinements < 2) throw std::invalid_argument("regularity probe needs >= 2 grids");
    RegularityReport rep;
    for (int r = 0; r < refinements; ++r) {
        const int n = base_steps << r;
        const Problem problem = make_problem(n);
        const LimitSolution limit = solve_limit(problem, opt);
        const SolutionTriple& sol = limit.solution;
        const auto w = limit.ensemble->weights();
        double k_inc = 0.0, y_inc = 0.0;
        const double KT = sol.K.back();
        for (int k = 0; k < n; ++k) {
            k_inc = std::max(k_inc, sol.K[static_cast<std::size_t>(k) + 1] - sol.K[static_cast<std::size_t>(k)]);
            const double shift_k = KT - sol.K[static_cast<std::size_t>(k)];
            const double shift_k1 = KT - sol.K[static_cast<std::size_t>(k) + 1];
            double e = 0.0;
            for (std::size_t s = 0; s < limit.ensemble->size(); ++s) {
                const double d = (sol.Y(k + 1, s) - shift_k1) - (sol.Y(k, s) - shift_k);
                e += w[s] * d * d;
            }
            y_inc = std::max(y_inc, e);
        }
        rep.steps.push_back(n);
        rep.dt.push_back(problem.model.dt());
        rep.k_increment.push_back(k_inc);
        rep.y_increment.push_back(y_inc);
    }
    rep.k_fit = fit_log_slope(rep.dt, rep.k_increment, {});
    rep.y_fit = fit_log_slope(rep.dt, rep.y_increment, {});
    return rep;
}

}  // namespace mrbsdej
