// Acceptance run: one PASS/FAIL line per criterion. Arguments select a subset of the
// criteria by number (default: all seven).

#include "mrbsdej/chaos_lab.hpp"
#include "mrbsdej/config.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

using namespace mrbsdej;
using Clock = std::chrono::steady_clock;

namespace {

const std::string kConfigDir = MRBSDEJ_CONFIG_DIR;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

DriverSpec constant_driver(std::function<double(double)> g, double bound) {
    DriverSpec d;
    d.evaluate = [g](double t, double, std::span<const double>) { return g(t); };
    d.bound_L = bound;
    return d;
}

RunConfig load(const std::string& name) { return load_config(kConfigDir + "/" + name); }

// ---------------------------------------------------------------------------------------

Verdict oracle_equivalence() {
    const int n = 3;
    const JumpModel model({1.0}, {1.0}, 1.0, n);
    Threshold falling;
    falling.a0 = 0.8;
    falling.a1 = -1.2;
    const LossSpec loss = make_affine_threshold_loss(1.6, 0.7, falling);
    const auto g = [](double t) { return -0.4 + std::sin(4 * t); };
    const DriverSpec f = constant_driver(g, 1.4);
    TerminalSpec xi;
    xi.evaluate = [](std::span<const std::uint16_t> c) { return std::cos(1.3 * c[0]) - 0.1; };
    xi.bound_M = 1.1;

    const auto t0 = Clock::now();
    const MultiEnsemble multi = build_joint_tree(model, 2);
    const ParticleSolution sol = solve_particles_constant(multi, f, xi, loss);
    const double runtime = seconds_since(t0);

    const oracle::Tree tree(2, {1.0}, 1.0, n);
    oracle::Values F(static_cast<std::size_t>(n) + 1, std::vector<double>(tree.size()));
    for (int k = 0; k <= n; ++k) std::fill(F[static_cast<std::size_t>(k)].begin(), F[static_cast<std::size_t>(k)].end(), g(k * tree.dt));
    std::vector<std::vector<double>> xo(2, std::vector<double>(tree.size()));
    for (int i = 0; i < 2; ++i)
        for (std::size_t s = 0; s < tree.size(); ++s) {
            const auto c = tree.counts(s, i, n);
            const std::vector<std::uint16_t> c16(c.begin(), c.end());
            xo[static_cast<std::size_t>(i)][s] = xi.evaluate(c16);
        }
    const auto ref = oracle::particle_system(tree, {F, F}, xo, [&loss](double t, double y) { return loss(t, y); });

    double dev = 0.0, kt = 0.0;
    for (std::size_t s = 0; s < multi.size(); ++s) {
        const std::size_t p = oracle::path_of(tree, multi, s);
        for (int k = 0; k <= n; ++k) {
            const auto kk = static_cast<std::size_t>(k);
            dev = std::max({dev, std::abs(sol.S(k, s) - ref.S[kk][p]), std::abs(sol.K(k, s) - ref.K[kk][p]),
                            std::abs(sol.psi(k, s) - ref.psi[kk][p])});
            for (int i = 0; i < 2; ++i)
                dev = std::max(dev, std::abs(sol.Y[static_cast<std::size_t>(i)](k, s) - ref.Y[static_cast<std::size_t>(i)][kk][p]));
        }
        kt = std::max(kt, sol.K(n, s));
    }
    return {dev <= 1e-10 && runtime < 1.0 && kt > 0.0,
            fmt("N=2 n=3 m=1 joint tree (%zu scenarios): max node deviation %.2e (tol 1e-10), max K_T %.3f, solve %.3f s (< 1 s)",
                multi.size(), dev, kt, runtime)};
}

Verdict closed_form_limit() {
    const RunConfig c = load("linear_closed_form.json");
    const Problem p = build_problem(c);
    const auto t0 = Clock::now();
    const PathEnsemble ens = build_exact_tree(p.model);
    const ConditionalExpectation ce(ens, Backend::exact);
    const auto xi = p.terminal.values(ens);
    const SolutionTriple sol = solve_mean_reflected(ce, p.driver, xi, p.loss, picard_config(c, p), reflection_options(c));
    const double runtime = seconds_since(t0);

    double exi = 0.0;
    for (std::size_t s = 0; s < ens.size(); ++s) exi += ens.weight(s) * xi[s];
    const Threshold& a = *p.loss.linear_threshold;
    const int n = p.model.steps();
    double err = 0.0;
    for (int k = 0; k <= n; ++k) {
        double expected = 0.0;
        for (int j = k; j <= n; ++j) expected = std::max(expected, a(p.model.time(j)));
        err = std::max(err, std::abs(sol.K.back() - sol.K[static_cast<std::size_t>(k)] - expected));
    }
    return {err <= 1e-8 && runtime < 1.0 && std::abs(exi) < 1e-12 && sol.K.back() > 0.0,
            fmt("l = y - a(t), f = 0, E xi = %.1e, n=%d: max |K_T - K_t - max_{s>=t} a(s)^+| = %.2e (tol 1e-8), K_T %.4f, %.3f s (< 1 s)",
                exi, n, err, sol.K.back(), runtime)};
}

struct SolveCheck {
    std::string name;
    double margin = 0.0, margin_tol = 0.0;
    double residual = 0.0, residual_tol = 0.0;
    bool ok() const { return margin >= -margin_tol && residual <= residual_tol; }
};

SolveCheck single_check(const std::string& name, const RunConfig& c, bool exact, std::vector<PicardRecord>* log = nullptr) {
    const Problem p = build_problem(c);
    const PathEnsemble ens = exact ? build_exact_tree(p.model) : sample_paths(p.model, c.solver.scenarios, c.master_seed);
    const ConditionalExpectation ce(ens, exact ? Backend::exact : Backend::regression, c.solver.regression);
    const SolutionTriple sol =
        solve_mean_reflected(ce, p.driver, p.terminal.values(ens), p.loss, picard_config(c, p), reflection_options(c));
    if (log) *log = sol.picard_log;
    const FlatnessReport fr = flatness_residual(sol, p.loss, ens);
    SolveCheck r{name, fr.min_margin, 1e-8, fr.residual, 1e-8};
    if (!exact) {
        // 3 se on top of the exact round-off floor; the residual se is bounded by sum_k se_k dK_k
        r.margin = 0.0;
        for (std::size_t k = 0; k < sol.margin.size(); ++k) r.margin = std::min(r.margin, sol.margin[k] + 3.0 * sol.margin_se[k]);
        double se = 0.0;
        for (std::size_t k = 0; k < sol.dK.size(); ++k) se += sol.margin_se[k] * sol.dK[k];
        r.residual_tol = 3.0 * se + 1e-8;
    }
    return r;
}

SolveCheck particle_check(const std::string& name, const RunConfig& c, int N, bool exact,
                          std::vector<PicardRecord>* log = nullptr) {
    const Problem p = build_problem(c);
    const MultiEnsemble multi = exact ? build_joint_tree(p.model, N) : sample_particles(p.model, N, c.solver.scenarios, c.master_seed);
    ParticleOptions opt = particle_options(c);
    opt.backend = exact ? Backend::exact : Backend::regression;
    const ParticleSolution sol = solve_particles(multi, p.driver, p.terminal, p.loss, picard_config(c, p), opt);
    if (log) *log = sol.picard_log;
    const SkorokhodReport sk = discrete_skorokhod_residual(sol, p.loss, multi);
    SolveCheck r{name, sk.min_margin, 1e-8, sk.residual, 1e-8};
    if (!exact) r.residual_tol = 3.0 * sk.residual_se + 1e-8;
    return r;
}

RunConfig with_steps(RunConfig c, int steps) {
    c.problem.jump_model.steps = steps;
    return c;
}

std::vector<PicardRecord> g_generic_single_log, g_generic_particle_log;

Verdict constraint_and_flatness() {
    std::vector<SolveCheck> checks;
    checks.push_back(single_check("single/closed-form exact", load("linear_closed_form.json"), true));
    checks.push_back(single_check("single/generic exact", load("generic.json"), true, &g_generic_single_log));
    checks.push_back(single_check("single/rate-sweep exact", load("rate_sweep.json"), true));
    checks.push_back(single_check("single/rate-sweep mc", load("rate_sweep.json"), false));
    checks.push_back(single_check("single/generic mc", load("generic.json"), false));
    checks.push_back(particle_check("particles/closed-form N=3 n=4 exact", with_steps(load("linear_closed_form.json"), 4), 3, true));
    checks.push_back(particle_check("particles/generic N=2 exact", load("generic.json"), 2, true, &g_generic_particle_log));
    checks.push_back(particle_check("particles/rate-sweep N=2 n=5 exact", with_steps(load("rate_sweep.json"), 5), 2, true));
    checks.push_back(particle_check("particles/rate-sweep N=8 mc", load("rate_sweep.json"), 8, false));
    checks.push_back(particle_check("particles/generic N=4 mc", load("generic.json"), 4, false));
    bool pass = true;
    std::ostringstream os;
    for (const auto& c : checks) {
        pass &= c.ok();
        os << "\n      " << (c.ok() ? "ok  " : "FAIL") << " " << c.name << ": min margin " << fmt("%.2e", c.margin)
           << " (>= -" << fmt("%.1e", c.margin_tol) << "), Skorokhod " << fmt("%.2e", c.residual) << " (<= "
           << fmt("%.2e", c.residual_tol) << ")";
    }
    return {pass, fmt("%zu solves (exact: 1e-8; Monte Carlo: 1e-8 + 3 standard errors)", checks.size()) + os.str()};
}

Verdict picard_window() {
    const RunConfig c = load("generic.json");
    const Problem p = build_problem(c);
    const PicardConfig cfg = picard_config(c, p);
    const double lk = p.driver.lipschitz_lambda * p.loss.kappa();
    if (g_generic_single_log.empty()) single_check("", c, true, &g_generic_single_log);
    if (g_generic_particle_log.empty()) particle_check("", c, 2, true, &g_generic_particle_log);
    // Changes at the round-off floor carry no contraction information.
    const double floor = 1e-12 * std::max(1.0, p.terminal.bound_M);
    double worst = 0.0;
    int counted = 0;
    for (const auto* log : {&g_generic_single_log, &g_generic_particle_log})
        for (const PicardRecord& r : *log)
            if (r.iteration >= 2 && r.change > floor) {
                worst = std::max(worst, r.ratio);
                ++counted;
            }
    const double h = cfg.steps_per_interval * p.model.dt();
    const bool window = lk > 0.0 && h <= 1.0 / (4.0 * lk) + 1e-12;
    return {window && counted > 0 && worst <= 0.55,
            fmt("generic instance, lambda kappa = %.3f, h = %.4f <= 1/(4 lambda kappa) = %.4f, %d intervals: worst ratio %.3f over %d iterations (<= 0.55)",
                lk, h, 1.0 / (4.0 * lk), cfg.q, worst, counted)};
}

Verdict chaos_rates() {
    const RunConfig c = load("rate_sweep.json");
    const Problem p = build_problem(c);
    const auto t0 = Clock::now();
    const LimitSolution limit = solve_limit(p, limit_options(c));
    const RateReport rep = rate_sweep(p, limit, sweep_config(c, p));
    const double runtime = seconds_since(t0);

    const SlopeFit &y = rep.err_Y.fit, &u = rep.err_U.fit, &k = rep.err_K.fit;
    const bool y_ok = y.slope - y.half_width >= -0.80 && y.slope + y.half_width <= -0.35;
    const bool u_ok = u.slope + u.half_width <= -0.10;
    const bool k_ok = k.slope + k.half_width <= -0.10;
    const bool mono = rep.err_Y.inversions <= 1 && rep.err_U.inversions <= 1 && rep.err_K.inversions <= 1;
    const bool time_ok = runtime <= 15 * 60;
    std::ostringstream os;
    os << fmt("N=%d..%d, M=%zu, n=%d, %d seeds, %s limit, %d failed runs, %.0f s (<= 900 s)", rep.N_values.front(),
              rep.N_values.back(), c.experiment.scenarios, p.model.steps(), c.experiment.seeds,
              limit.exact() ? "exact" : "mc", rep.failures, runtime);
    auto line = [&](const char* name, const MetricSummary& m, const char* band, bool ok) {
        os << "\n      " << (ok ? "ok  " : "FAIL") << " " << name << fmt(" slope %.3f +- %.3f in %s, inversions %d; means", m.fit.slope,
                                                                          m.fit.half_width, band, m.inversions);
        for (double v : m.mean) os << fmt(" %.3e", v);
    };
    line("err_Y", rep.err_Y, "[-0.80, -0.35]", y_ok && rep.err_Y.inversions <= 1);
    line("err_U", rep.err_U, "(-inf, -0.10]", u_ok && rep.err_U.inversions <= 1);
    line("err_K", rep.err_K, "(-inf, -0.10]", k_ok && rep.err_K.inversions <= 1);
    return {y_ok && u_ok && k_ok && mono && time_ok && rep.failures == 0, os.str()};
}

Verdict regularity() {
    LimitOptions opt;
    // f = 0, xi = N_T, slack constraint: E|y_t - y_s|^2 = nu |t - s|
    const double nu = 0.1;
    auto count_instance = [nu](int steps) {
        Threshold th;
        th.a0 = -100.0;
        DriverSpec f = constant_driver([](double) { return 0.0; }, 0.0);
        TerminalSpec xi;
        xi.evaluate = [](std::span<const std::uint16_t> c) { return double(c[0]); };
        xi.bound_M = 64.0;
        return Problem{JumpModel({1.0}, {nu}, 1.0, steps), make_linear_loss(1.0, th), f, xi};
    };
    const RegularityReport y = regularity_probe(count_instance, 2, 4, opt);
    const bool y_ok = y.y_fit.slope - y.y_fit.half_width >= 0.9 && y.y_fit.slope + y.y_fit.half_width <= 1.1;

    const RunConfig g = load("regularity_generic.json");
    LimitOptions gopt = limit_options(g);
    gopt.picard.reset();
    const RegularityReport k = regularity_probe([&g](int steps) { return build_problem(g, steps); },
                                                g.experiment.regularity_base_steps,
                                                g.experiment.regularity_refinements, gopt);
    const bool binding = std::all_of(k.k_increment.begin(), k.k_increment.end(), [](double v) { return v > 0.0; });
    const bool k_ok = binding && k.k_fit.slope - k.k_fit.half_width >= 0.45;

    std::ostringstream os;
    os << (y_ok ? "ok  " : "FAIL") << fmt(" E|dy|^2 slope %.3f +- %.3f in [0.9, 1.1] (compensated count, nu=%.2f, n=2..16)",
                                          y.y_fit.slope, y.y_fit.half_width, nu);
    os << "\n      " << (k_ok ? "ok  " : "FAIL")
       << fmt(" K-increment slope %.3f +- %.3f >= 0.45 (regularity_generic.json, exact, n=2..16); increments", k.k_fit.slope,
              k.k_fit.half_width);
    for (double v : k.k_increment) os << fmt(" %.3e", v);
    return {y_ok && k_ok, os.str()};
}

Verdict invariant_suite() {
    std::vector<std::string> binaries;
    std::stringstream list(MRBSDEJ_INVARIANT_SUITE);
    for (std::string item; std::getline(list, item, ',');) binaries.push_back(item);
    const auto t0 = Clock::now();
    int failed = 0;
    std::ostringstream os;
    for (const auto& b : binaries) {
        const auto t1 = Clock::now();
        const std::string cmd = "\"" + b + "\" --minimal > /dev/null 2>&1";
        const int rc = std::system(cmd.c_str());
        failed += rc != 0;
        const auto slash = b.find_last_of('/');
        os << "\n      " << (rc == 0 ? "ok  " : "FAIL") << " " << b.substr(slash == std::string::npos ? 0 : slash + 1)
           << fmt(" %.2f s", seconds_since(t1));
    }
    const double runtime = seconds_since(t0);
    return {failed == 0 && runtime < 120.0 && !binaries.empty(),
            fmt("%zu suites, %d failing, %.1f s (< 120 s)", binaries.size(), failed, runtime) + os.str()};
}

}  // namespace

int main(int argc, char** argv) {
    struct Criterion {
        int id;
        const char* name;
        Verdict (*run)();
    };
    const Criterion all[] = {{1, "oracle equivalence", oracle_equivalence},
                             {2, "closed-form limit", closed_form_limit},
                             {3, "constraint and flatness", constraint_and_flatness},
                             {4, "Picard contraction window", picard_window},
                             {5, "chaos rates", chaos_rates},
                             {6, "regularity probes", regularity},
                             {7, "invariant suite", invariant_suite}};
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    int failures = 0;
    for (const auto& c : all) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failures += !v.pass;
        std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name << "): " << v.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
