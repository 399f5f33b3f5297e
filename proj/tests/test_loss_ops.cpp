#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mrbsdej/loss_ops.hpp"

#include <cmath>
#include <random>

using namespace mrbsdej;

namespace {

Threshold constant_level(double a) {
    Threshold th;
    th.a0 = a;
    return th;
}

LossSpec cubic_loss() {
    LossSpec l;
    l.family = LossFamily::custom;
    l.evaluate = [](double, double y) {
        const double z = y - 0.5;
        return 2.0 * z + z * z * z;
    };
    l.kappa_lower = 2.0;
    l.kappa_upper = 1e9;
    return l;
}

std::vector<LossSpec> property_losses() {
    Threshold sine;
    sine.kind = Threshold::Kind::sine;
    sine.a0 = 0.2;
    sine.amplitude = 0.7;
    sine.frequency = 1.5;
    Threshold affine;
    affine.a0 = 0.4;
    affine.a1 = -0.8;
    LossTable table;
    table.times = {0.0, 0.5, 1.0};
    table.levels = {-2.0, 0.0, 1.0, 3.0};
    for (double t : table.times)
        for (double y : table.levels) table.values.push_back((y < 0 ? 1.5 * y : 0.8 * y) - 0.3 * t);
    return {make_linear_loss(1.3, sine), make_affine_threshold_loss(2.5, 0.5, affine),
            make_affine_threshold_loss(0.7, 1.9, sine), make_table_loss(table, 0.8, 1.5, 0.3, 4.0)};
}

}  // namespace

TEST_CASE("closed-form linear reflection") {
    const LossSpec l = make_linear_loss(1.0, constant_level(0.5));
    const SampleCloud a{{0.2}, {1.0}}, b{{0.9}, {1.0}};
    CHECK(l_bar_operator(l, 0.0, a) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(l_bar_operator(l, 0.0, b) == doctest::Approx(-0.4).epsilon(1e-15));
    CHECK(l_operator(l, 0.0, a) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(l_operator(l, 0.0, b) == 0.0);
    const SampleCloud c{{0.1, 0.9, 0.5}, {0.25, 0.25, 0.5}};  // mean 0.5: exactly binding
    CHECK(l_operator(l, 0.3, c) == 0.0);
}

TEST_CASE("bisection agrees with the closed form for a linear loss") {
    const LossSpec closed = make_linear_loss(1.0, constant_level(0.5));
    LossSpec generic = closed;
    generic.linear_threshold.reset();
    generic.family = LossFamily::custom;
    const SampleCloud c{{0.1, -0.4, 0.3}, {0.2, 0.5, 0.3}};
    CHECK(std::abs(l_bar_operator(generic, 0.0, c) - l_bar_operator(closed, 0.0, c)) <= 2e-10);
}

TEST_CASE("cubic loss root against a dense grid scan") {
    const LossSpec l = cubic_loss();
    const SampleCloud c{{0.0, 1.0}, {0.5, 0.5}};
    const double root = l_bar_operator(l, 0.0, c);
    // smallest grid point on [-2, 2] with a nonnegative mean loss, 10^6 points
    const int points = 1'000'000;
    double scan = NAN;
    for (int i = 0; i <= points; ++i) {
        const double x = -2.0 + 4.0 * i / points;
        if (0.5 * (l(0, x) + l(0, x + 1.0)) >= 0.0) {
            scan = x;
            break;
        }
    }
    CHECK(std::abs(root - scan) <= 4.0 / points);
    // exact root: symmetric cloud around 0.5 puts it at x = 0
    CHECK(std::abs(root) <= 1e-9);
}

TEST_CASE("empirical reflection") {
    Threshold zero;
    const LossSpec l = make_linear_loss(1.0, zero);
    const double a[] = {-1.0, 3.0}, b[] = {-1.0, -3.0};
    CHECK(empirical_l_operator(l, 0.0, a) == 0.0);
    CHECK(empirical_l_operator(l, 0.0, b) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("empirical reflection equals the uniform-cloud operator") {
    const LossSpec l = cubic_loss();
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> v(5);
        for (double& x : v) x = g(rng);
        const std::vector<double> w(5, 0.2);
        CHECK(std::abs(empirical_l_operator(l, 0.0, v) - l_operator(l, 0.0, v, w)) <= 1e-10);
        // labelling does not matter
        std::vector<double> r(v.rbegin(), v.rend());
        CHECK(empirical_l_operator(l, 0.0, v) == empirical_l_operator(l, 0.0, r));
    }
}

TEST_CASE("reflection properties on random clouds") {
    const double tol = BisectionOptions{}.tol;
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g(0.0, 1.5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (const LossSpec& l : property_losses()) {
        const double kappa = l.kappa();
        for (int trial = 0; trial < 200; ++trial) {
            const int n = 1 + static_cast<int>(u(rng) * 8);
            std::vector<double> w(static_cast<std::size_t>(n)), a(w.size()), b(w.size());
            double sw = 0.0;
            for (auto& x : w) sw += (x = u(rng) + 0.05);
            for (auto& x : w) x /= sw;
            for (std::size_t i = 0; i < w.size(); ++i) {
                a[i] = g(rng) - 1.0;
                b[i] = a[i] + 0.5 * g(rng);
            }
            double dist = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) dist += w[i] * std::abs(a[i] - b[i]);
            const double t = u(rng), s = u(rng);

            const double La = l_operator(l, t, a, w), Lb = l_operator(l, t, b, w);
            CHECK(std::abs(La - Lb) <= kappa * dist + 2 * tol + 1e-12);
            const double Lbs = l_operator(l, s, b, w);
            CHECK(std::abs(La - Lbs) <= kappa * dist + l.r_bar() * std::abs(t - s) + 2 * tol + 1e-12);

            const double c = g(rng);
            std::vector<double> shifted = a;
            for (double& x : shifted) x += c;
            CHECK(std::abs(l_bar_operator(l, t, shifted, w) - (l_bar_operator(l, t, a, w) - c)) <= 2 * tol + 1e-12);

            std::vector<double> up = a;
            for (double& x : up) x += std::abs(g(rng));
            CHECK(l_operator(l, t, up, w) <= La + 2 * tol);

            CHECK(La >= 0.0);
            std::vector<double> moved = a;
            for (double& x : moved) x += La;
            CHECK(expected_loss(l, t, moved, w) >= -l.kappa_upper * tol - 1e-12);
        }
    }
}

TEST_CASE("bracket search gives up beyond the range") {
    LossSpec l;
    l.evaluate = [](double, double y) { return std::atan(y) - 2.0; };  // never reaches 0
    l.kappa_lower = 1e-3;
    const double v[] = {0.0}, w[] = {1.0};
    CHECK_THROWS_AS(l_operator(l, 0.0, v, w), BracketNotFound);
}

TEST_CASE("loss tables") {
    const LossTable t = parse_loss_table("t,y,l\n0,0,0\n0,1,2\n1,0,-1\n1,1,1\n");
    CHECK(t(0.0, 0.5) == doctest::Approx(1.0));
    CHECK(t(0.5, 0.5) == doctest::Approx(0.5));
    CHECK(t(1.0, 2.0) == doctest::Approx(3.0));   // linear extrapolation in y
    CHECK(t(-1.0, 1.0) == doctest::Approx(2.0));  // clamped in t
    CHECK_THROWS_AS(parse_loss_table("0,0,0\n0,1,2\n1,0,-1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_loss_table("0,0,0\n0,x,2\n"), std::invalid_argument);
}

TEST_CASE("linear-loss certificates") {
    Threshold th;
    th.kind = Threshold::Kind::sine;
    th.a0 = 0.1;
    th.amplitude = 0.5;
    th.frequency = 2.0;
    const LossSpec l = make_linear_loss(2.0, th);
    CHECK(l.kappa() == 1.0);
    CHECK(l.time_lipschitz == doctest::Approx(2.0 * 0.5 * 2.0 * 2.0 * M_PI));
    CHECK(l.r_bar() == doctest::Approx(0.5 * 2.0 * 2.0 * M_PI));
    CHECK_THROWS_AS(make_linear_loss(0.0, th), std::invalid_argument);
}
