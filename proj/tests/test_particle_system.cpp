#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mrbsdej/particle_system.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>

using namespace mrbsdej;

namespace {

DriverSpec driver(std::function<double(double, double, std::span<const double>)> f, double lambda, double bound, bool y) {
    DriverSpec d;
    d.evaluate = std::move(f);
    d.lipschitz_lambda = lambda;
    d.bound_L = bound;
    d.depends_on_y = y;
    return d;
}

Threshold sine_threshold(double a0, double amplitude) {
    Threshold th;
    th.kind = Threshold::Kind::sine;
    th.a0 = a0;
    th.amplitude = amplitude;
    return th;
}

TerminalSpec count_terminal(double shift) {
    TerminalSpec t;
    t.evaluate = [shift](std::span<const std::uint16_t> c) { return std::cos(1.3 * c[0]) + shift; };
    t.bound_M = 1.0 + std::abs(shift);
    return t;
}

std::vector<std::vector<double>> oracle_terminal(const oracle::Tree& tree, const TerminalSpec& xi) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(tree.N), std::vector<double>(tree.size()));
    for (int i = 0; i < tree.N; ++i)
        for (std::size_t s = 0; s < tree.size(); ++s) {
            const auto c = tree.counts(s, i, tree.n);
            const std::vector<std::uint16_t> c16(c.begin(), c.end());
            out[static_cast<std::size_t>(i)][s] = xi.evaluate(c16);
        }
    return out;
}

ScenarioExpectation identity() {
    return [](int, std::span<const double> next, std::span<double> out) { std::copy(next.begin(), next.end(), out.begin()); };
}

/// Y and K against the whole-horizon oracle. S and psi live on the stitching interval
/// [k0, k1] containing k: the later intervals enter through the common shift E_k S_{k1},
/// so psi = (psi_global - E_k S_{k1})^+ and S = S_global - E_k S_{k1}.
void check_against(const ParticleSolution& sol, const MultiEnsemble& multi, const oracle::Tree& tree,
                   const oracle::ParticleResult& ref, double tol) {
    std::vector<std::vector<double>> shift(static_cast<std::size_t>(tree.n) + 1, std::vector<double>(tree.size(), 0.0));
    for (std::size_t b = 1; b + 1 < sol.boundaries.size(); ++b) {
        const int k1 = sol.boundaries[b];
        for (int k = sol.boundaries[b - 1]; k < k1; ++k)
            shift[static_cast<std::size_t>(k)] = tree.cond(k, ref.S[static_cast<std::size_t>(k1)]);
    }
    for (std::size_t s = 0; s < multi.size(); ++s) {
        const std::size_t p = oracle::path_of(tree, multi, s);
        for (int k = 0; k <= tree.n; ++k) {
            const auto kk = static_cast<std::size_t>(k);
            const bool end = k > 0 && std::find(sol.boundaries.begin(), sol.boundaries.end(), k) != sol.boundaries.end() && k < tree.n;
            if (!end) {
                CHECK(std::abs(sol.S(k, s) - (ref.S[kk][p] - shift[kk][p])) < tol);
                CHECK(std::abs(sol.psi(k, s) - std::max(ref.psi[kk][p] - shift[kk][p], 0.0)) < tol);
            }
            CHECK(std::abs(sol.K(k, s) - ref.K[kk][p]) < tol);
            for (int i = 0; i < tree.N; ++i)
                CHECK(std::abs(sol.Y[static_cast<std::size_t>(i)](k, s) - ref.Y[static_cast<std::size_t>(i)][kk][p]) < tol);
        }
    }
}

}  // namespace

TEST_CASE("Snell envelope of a deterministic obstacle") {
    AdaptedProcess psi(2, 1);
    psi(0, 0) = 0.0;
    psi(1, 0) = 1.0;
    psi(2, 0) = 0.0;
    const SnellResult r = snell_envelope(psi, identity());
    CHECK(r.S(0, 0) == 1.0);
    CHECK(r.S(1, 0) == 1.0);
    CHECK(r.S(2, 0) == 0.0);
    CHECK(r.dK(0, 0) == 0.0);
    CHECK(r.dK(1, 0) == 1.0);
    CHECK(r.K(0, 0) == 0.0);
    CHECK(r.K(1, 0) == 0.0);
    CHECK(r.K(2, 0) == 1.0);

    const SnellResult z = snell_envelope(AdaptedProcess(3, 4), identity());
    for (double v : z.S.values) CHECK(v == 0.0);
    for (double v : z.K.values) CHECK(v == 0.0);
}

TEST_CASE("empirical reflection of two particles") {
    const LossSpec l = make_linear_loss(1.0, Threshold{});
    const JumpModel model({1.0}, {1.0}, 0.5, 1);
    std::vector<AdaptedProcess> y(2, AdaptedProcess(1, 2));
    y[0](0, 0) = -1.0, y[1](0, 0) = 3.0;
    y[0](0, 1) = -1.0, y[1](0, 1) = -3.0;
    const AdaptedProcess psi = psi_process(l, model, y);
    CHECK(psi(0, 0) == 0.0);
    CHECK(psi(0, 1) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("constant driver: two particles against stopping-rule enumeration") {
    for (int n : {2, 3}) {
        const JumpModel model({1.0}, {1.0}, 1.0, n);
        const MultiEnsemble multi = build_joint_tree(model, 2);
        const oracle::Tree tree(2, {1.0}, 1.0, n);
        Threshold falling;
        falling.a0 = 0.8;
        falling.a1 = -1.2;
        const LossSpec loss = make_affine_threshold_loss(1.6, 0.7, falling);
        const DriverSpec f = driver([](double t, double, std::span<const double>) { return -0.4 + std::sin(4 * t); }, 0.0, 1.4, false);
        const TerminalSpec xi = count_terminal(-0.1);
        const ParticleSolution sol = solve_particles_constant(multi, f, xi, loss);

        oracle::Values F1(static_cast<std::size_t>(n) + 1, std::vector<double>(tree.size()));
        for (int k = 0; k <= n; ++k) std::fill(F1[static_cast<std::size_t>(k)].begin(), F1[static_cast<std::size_t>(k)].end(), -0.4 + std::sin(4 * k * tree.dt));
        const auto ref = oracle::particle_system(tree, {F1, F1}, oracle_terminal(tree, xi),
                                                 [&loss](double t, double y) { return loss(t, y); });
        check_against(sol, multi, tree, ref, 1e-10);
        double kt = 0.0;
        for (std::size_t s = 0; s < multi.size(); ++s) kt = std::max(kt, sol.K(n, s));
        CHECK(kt > 0.0);
        CHECK(particle_reconstruction_residual(sol, multi) < 1e-10);
    }
}

TEST_CASE("Snell envelope: supermartingale, dominates psi, minimal") {
    const JumpModel model({1.0, -1.0}, {0.9, 0.6}, 1.0, 3);
    const MultiEnsemble multi = build_joint_tree(model, 2);
    const LossSpec loss = make_linear_loss(1.0, sine_threshold(0.1, 0.9));
    const DriverSpec f = driver([](double t, double, std::span<const double>) { return std::cos(5 * t); }, 0.0, 1.0, false);
    const ParticleSolution sol = solve_particles_constant(multi, f, count_terminal(0.0), loss);
    const ConditionalExpectation ce(multi.particle(0), Backend::exact);
    const ScenarioExpectation expect = tree_expectation(ce);
    std::vector<double> cont(multi.size());
    for (int k = 0; k < 3; ++k) {
        expect(k, sol.S.row(k + 1), cont);
        for (std::size_t s = 0; s < multi.size(); ++s) {
            CHECK(sol.S(k, s) >= cont[s] - 1e-12);
            CHECK(sol.S(k, s) >= sol.psi(k, s) - 1e-12);
            // lowering S by 1e-6 at any node breaks one of the two inequalities
            CHECK((sol.S(k, s) - 1e-6 < cont[s] || sol.S(k, s) - 1e-6 < sol.psi(k, s)));
            CHECK(sol.dK(k, s) >= 0.0);
        }
    }
    for (std::size_t s = 0; s < multi.size(); ++s) CHECK(sol.S(3, s) == sol.psi(3, s));
}

TEST_CASE("exchangeable particles") {
    const JumpModel model({1.0}, {1.1}, 1.0, 2);
    const MultiEnsemble multi = build_joint_tree(model, 3);
    const int perm[] = {2, 0, 1};
    const MultiEnsemble permuted = multi.permuted(perm);
    const LossSpec loss = make_linear_loss(1.0, sine_threshold(0.3, 0.5));
    const DriverSpec f = driver([](double, double, std::span<const double>) { return -0.2; }, 0.0, 0.2, false);
    const ParticleSolution a = solve_particles_constant(multi, f, count_terminal(0.0), loss);
    const ParticleSolution b = solve_particles_constant(permuted, f, count_terminal(0.0), loss);
    for (std::size_t x = 0; x < a.K.values.size(); ++x) CHECK(std::abs(a.K.values[x] - b.K.values[x]) <= 1e-15);
    for (int i = 0; i < 3; ++i) CHECK(b.Y[static_cast<std::size_t>(i)].values == a.Y[static_cast<std::size_t>(perm[i])].values);
}

TEST_CASE("slack constraint keeps K at zero") {
    const JumpModel model({1.0}, {1.0}, 1.0, 3);
    const MultiEnsemble multi = build_joint_tree(model, 2);
    const LossSpec loss = make_linear_loss(1.0, sine_threshold(-5.0, 0.5));
    const DriverSpec f = driver([](double t, double, std::span<const double>) { return t; }, 0.0, 1.0, false);
    const ParticleSolution sol = solve_particles_constant(multi, f, count_terminal(0.0), loss);
    for (double v : sol.K.values) CHECK(v == 0.0);
    for (double v : sol.S.values) CHECK(v == 0.0);
    CHECK(discrete_skorokhod_residual(sol, loss, multi).residual == 0.0);
}

TEST_CASE("a single particle") {
    const JumpModel model({1.0}, {1.0}, 1.0, 4);
    const MultiEnsemble multi = build_joint_tree(model, 1);
    const LossSpec loss = make_linear_loss(1.0, sine_threshold(0.4, 0.3));
    const DriverSpec f = driver([](double, double, std::span<const double>) { return 0.0; }, 0.0, 0.0, false);
    const ParticleSolution sol = solve_particles_constant(multi, f, count_terminal(0.0), loss);
    for (int k = 0; k < 4; ++k)
        for (std::size_t s = 0; s < multi.size(); ++s) CHECK(sol.K(k + 1, s) >= sol.K(k, s));
    // one particle: the constraint holds on every path
    for (int k = 0; k <= 4; ++k)
        for (std::size_t s = 0; s < multi.size(); ++s)
            if (k < 4 || sol.psi(4, s) == 0.0) CHECK(loss(model.time(k), sol.Y[0](k, s)) >= -1e-10);
    CHECK(particle_reconstruction_residual(sol, multi) < 1e-10);
}

TEST_CASE("Y-independent driver takes the constant path") {
    const JumpModel model({1.0}, {1.0}, 1.0, 3);
    const MultiEnsemble multi = build_joint_tree(model, 2);
    const LossSpec loss = make_linear_loss(1.0, sine_threshold(0.4, 0.3));
    const DriverSpec f = driver([](double t, double, std::span<const double>) { return std::sin(t); }, 0.0, 1.0, false);
    const ParticleSolution a = solve_particles(multi, f, count_terminal(0.0), loss, compute_picard_window(f, loss, 1.0, 3));
    const ParticleSolution b = solve_particles_constant(multi, f, count_terminal(0.0), loss);
    CHECK(a.picard_log.size() == 1);
    CHECK(a.K.values == b.K.values);
}

TEST_CASE("Y-dependent driver: stitched Picard against the global fixed point") {
    const JumpModel model({1.0}, {1.0}, 1.0, 3);
    const MultiEnsemble multi = build_joint_tree(model, 2);
    const oracle::Tree tree(2, {1.0}, 1.0, 3);
    const LossSpec loss = make_linear_loss(1.0, sine_threshold(0.3, 0.6));
    const DriverSpec f = driver([](double, double y, std::span<const double>) { return 0.3 * y; }, 0.3, 0.0, true);
    const TerminalSpec xi = count_terminal(-0.2);
    PicardConfig cfg = compute_picard_window(f, loss, 1.0, 3);
    cfg.tol = 1e-14;
    REQUIRE(cfg.steps_per_interval < 3);
    const ParticleSolution sol = solve_particles(multi, f, xi, loss, cfg);
    CHECK(sol.boundaries.size() > 2);
    const auto ref = oracle::particle_fixed_point(tree, [](double, double y) { return 0.3 * y; }, oracle_terminal(tree, xi),
                                                  [&loss](double t, double y) { return loss(t, y); });
    check_against(sol, multi, tree, ref, 1e-10);
    CHECK(particle_reconstruction_residual(sol, multi) < 1e-10);
    const SkorokhodReport sk = discrete_skorokhod_residual(sol, loss, multi);
    CHECK(sk.residual <= 1e-10);
    CHECK(sk.min_margin >= -1e-10);
}

TEST_CASE("Skorokhod detector flags a push while slack") {
    const JumpModel model({1.0}, {1.0}, 1.0, 3);
    const MultiEnsemble multi = build_joint_tree(model, 2);
    const LossSpec loss = make_linear_loss(1.0, sine_threshold(-1.0, 0.0));
    const DriverSpec f = driver([](double, double, std::span<const double>) { return 0.0; }, 0.0, 0.0, false);
    ParticleSolution sol = solve_particles_constant(multi, f, count_terminal(0.0), loss);
    CHECK(discrete_skorokhod_residual(sol, loss, multi).residual == 0.0);
    for (std::size_t s = 0; s < multi.size(); ++s) sol.dK(1, s) = 0.1;
    CHECK(discrete_skorokhod_residual(sol, loss, multi).residual > 0.05);
}

TEST_CASE("Monte Carlo particles: constraint and Skorokhod within sampling error") {
    const JumpModel model({1.0}, {1.0}, 1.0, 8);
    const MultiEnsemble multi = sample_particles(model, 4, 3000, 41);
    const LossSpec loss = make_linear_loss(1.0, sine_threshold(0.2, 0.5));
    const DriverSpec f = driver([](double, double y, std::span<const double>) { return 0.2 * y - 0.1; }, 0.2, 0.1, true);
    ParticleOptions opt;
    opt.backend = Backend::regression;
    const ParticleSolution sol = solve_particles(multi, f, count_terminal(0.0), loss, compute_picard_window(f, loss, 1.0, 8), opt);
    const SkorokhodReport sk = discrete_skorokhod_residual(sol, loss, multi);
    CHECK(sk.residual <= 3.0 * sk.residual_se + 1e-8);
    for (int k = 0; k < 8; ++k)
        for (std::size_t s = 0; s < multi.size(); ++s) {
            CHECK(sol.dK(k, s) >= 0.0);
            double m = 0.0;
            for (int i = 0; i < 4; ++i) m += loss(model.time(k), sol.Y[static_cast<std::size_t>(i)](k, s)) / 4;
            CHECK(m >= -1e-8);
        }
}

TEST_CASE("second moment of the running supremum stays bounded in N") {
    const JumpModel model({1.0}, {1.0}, 1.0, 8);
    const LossSpec loss = make_linear_loss(1.0, sine_threshold(0.2, 0.5));
    const DriverSpec f = driver([](double, double, std::span<const double>) { return -0.3; }, 0.0, 0.3, false);
    ParticleOptions opt;
    opt.backend = Backend::regression;
    std::vector<double> c;
    for (int N : {2, 4, 8}) {
        const MultiEnsemble multi = sample_particles(model, N, 2000, 7);
        const ParticleSolution sol = solve_particles_constant(multi, f, count_terminal(0.0), loss, opt);
        double e = 0.0;
        for (std::size_t s = 0; s < multi.size(); ++s) {
            double sup = 0.0;
            for (int k = 0; k <= 8; ++k) sup = std::max(sup, std::abs(sol.Y[0](k, s)));
            e += multi.weights()[s] * sup * sup;
        }
        c.push_back(e);
    }
    CHECK(c[1] <= 1.5 * c[0]);
    CHECK(c[2] <= 1.5 * c[1]);
}
