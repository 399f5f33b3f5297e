#include "mrbsdej/config.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mrbsdej {

namespace {

std::string fmt(std::initializer_list<std::pair<const char*, double>> items) {
    std::ostringstream os;
    os.precision(12);
    bool first = true;
    for (const auto& [k, v] : items) {
        os << (first ? "" : ", ") << k << '=' << v;
        first = false;
    }
    return os.str();
}

std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = n == 1 ? a : a + (b - a) * i / (n - 1);
    return v;
}

double nu_norm(std::span<const double> du, std::span<const double> nu) {
    double s = 0.0;
    for (std::size_t j = 0; j < du.size(); ++j) s += nu[j] * du[j] * du[j];
    return std::sqrt(s);
}

void check_terminal(const Problem& p, const ValidationOptions& opt, ValidationReport& rep) {
    const JumpModel& model = p.model;
    std::optional<PathEnsemble> ens;
    try {
        ens.emplace(build_exact_tree(model, opt.enumeration_cap));
    } catch (const EnumerationCapExceeded&) {
        ens.emplace(sample_paths(model, opt.pilot_scenarios, opt.seed));
    }
    const auto xi = p.terminal.values(*ens);
    const auto w = ens->weights();
    const double T = model.horizon();
    double mean = 0.0, sq = 0.0, worst_xi = 0.0;
    std::size_t worst_s = 0;
    for (std::size_t s = 0; s < xi.size(); ++s) {
        const double l = p.loss(T, xi[s]);
        mean += w[s] * l;
        sq += w[s] * l * l;
        if (std::abs(xi[s]) > worst_xi) {
            worst_xi = std::abs(xi[s]);
            worst_s = s;
        }
    }
    const bool exact = ens->kind() == EnsembleKind::exact_tree;
    double se = 0.0;
    if (!exact) se = std::sqrt(std::max(0.0, sq - mean * mean) / static_cast<double>(xi.size() - 1));

    AssumptionCheck feas{"terminal_feasibility", true, mean, 0.0, ""};
    feas.passed = exact ? mean >= -1e-10 : mean + 3.0 * se >= 0.0;
    feas.witness = fmt({{"E[l(T,xi)]", mean}, {"se", se}}) + (exact ? " (exact tree)" : " (Monte Carlo pilot)");
    rep.checks.push_back(feas);

    AssumptionCheck bound{"terminal_bound", worst_xi <= p.terminal.bound_M * (1.0 + 1e-12), worst_xi,
                          p.terminal.bound_M, ""};
    bound.witness = "scenario " + std::to_string(worst_s) + ": " + fmt({{"|xi|", worst_xi}});
    rep.checks.push_back(bound);
}

void check_driver(const Problem& p, const ValidationOptions& opt, ValidationReport& rep) {
    const auto times = linspace(0.0, p.model.horizon(), opt.time_points);
    const auto nu = p.model.intensities();
    const int m = p.model.mark_count();
    const std::vector<double> zero(static_cast<std::size_t>(m), 0.0);

    AssumptionCheck bound{"driver_bound", true, 0.0, p.driver.bound_L, ""};
    for (double t : times) {
        const double v = std::abs(p.driver(t, 0.0, zero));
        if (v > bound.value) {
            bound.value = v;
            bound.witness = fmt({{"t", t}, {"|f(t,0,0)|", v}});
        }
    }
    bound.passed = bound.value <= p.driver.bound_L + 1e-9;
    rep.checks.push_back(bound);

    // Probe points (y, u): y on a level grid, u on a small grid per mark (axes only when m > 2).
    const double span = opt.level_span;
    const auto levels = linspace(-span, span, std::max(3, opt.level_points / 2));
    const std::vector<double> u_levels{-0.5 * span, -1.0, 0.0, 1.0, 0.5 * span};
    std::vector<std::vector<double>> us;
    if (m <= 2) {
        std::vector<std::size_t> idx(static_cast<std::size_t>(m), 0);
        for (;;) {
            std::vector<double> u(static_cast<std::size_t>(m));
            for (int j = 0; j < m; ++j) u[static_cast<std::size_t>(j)] = u_levels[idx[static_cast<std::size_t>(j)]];
            us.push_back(u);
            int j = 0;
            while (j < m && ++idx[static_cast<std::size_t>(j)] == u_levels.size()) idx[static_cast<std::size_t>(j++)] = 0;
            if (j == m) break;
        }
    } else {
        us.push_back(zero);
        for (int j = 0; j < m; ++j)
            for (double v : u_levels) {
                if (v == 0.0) continue;
                auto u = zero;
                u[static_cast<std::size_t>(j)] = v;
                us.push_back(u);
            }
    }
    struct Point {
        double y;
        std::vector<double> u;
    };
    std::vector<Point> pts;
    for (double y : levels)
        for (const auto& u : us) pts.push_back({y, u});
    // Close pairs around every level catch local kinks between grid points.
    const double h = 1e-3 * (levels[1] - levels[0]);

    AssumptionCheck lip{"driver_lipschitz", true, 0.0, p.driver.lipschitz_lambda, ""};
    std::vector<double> du(static_cast<std::size_t>(m));
    auto consider = [&](double t, const Point& a, const Point& b, double fa, double fb) {
        for (int j = 0; j < m; ++j) du[static_cast<std::size_t>(j)] = a.u[static_cast<std::size_t>(j)] - b.u[static_cast<std::size_t>(j)];
        const double dist = std::abs(a.y - b.y) + nu_norm(du, nu);
        if (dist <= 0.0) return;
        const double excess = std::abs(fa - fb) - p.driver.lipschitz_lambda * dist;
        const double ratio = std::abs(fa - fb) / dist;
        if (ratio > lip.value) lip.value = ratio;
        if (excess > 1e-9 && lip.passed) {
            lip.passed = false;
            std::ostringstream os;
            os.precision(12);
            os << "t=" << t << ", y1=" << a.y << ", y2=" << b.y << ", |u1-u2|_nu=" << nu_norm(du, nu)
               << ", |f1-f2|=" << std::abs(fa - fb) << " > lambda*dist=" << p.driver.lipschitz_lambda * dist;
            lip.witness = os.str();
        }
    };
    std::vector<double> fv(pts.size());
    for (double t : times) {
        for (std::size_t a = 0; a < pts.size(); ++a) fv[a] = p.driver(t, pts[a].y, pts[a].u);
        for (std::size_t a = 0; a < pts.size(); ++a)
            for (std::size_t b = a + 1; b < pts.size(); ++b) consider(t, pts[a], pts[b], fv[a], fv[b]);
        for (std::size_t a = 0; a < pts.size(); ++a) {
            const Point q{pts[a].y + h, pts[a].u};
            consider(t, pts[a], q, fv[a], p.driver(t, q.y, q.u));
        }
    }
    if (lip.passed) lip.witness = fmt({{"max sampled ratio", lip.value}});
    rep.checks.push_back(lip);
}

void check_loss(const Problem& p, const ValidationOptions& opt, ValidationReport& rep) {
    const LossSpec& l = p.loss;
    const auto times = linspace(0.0, p.model.horizon(), opt.time_points);
    const auto levels = linspace(-opt.level_span, opt.level_span, opt.level_points);

    AssumptionCheck order{"loss_kappa_order", l.kappa_lower > 0.0 && l.kappa_upper >= l.kappa_lower,
                          l.kappa_lower, l.kappa_upper, fmt({{"kappa_lower", l.kappa_lower}, {"kappa_upper", l.kappa_upper}})};
    rep.checks.push_back(order);

    AssumptionCheck lo{"loss_lower_lipschitz", true, std::numeric_limits<double>::infinity(), l.kappa_lower, ""};
    AssumptionCheck hi{"loss_upper_lipschitz", true, 0.0, l.kappa_upper, ""};
    AssumptionCheck tl{"loss_time_lipschitz", true, 0.0, l.time_lipschitz, ""};
    AssumptionCheck gr{"loss_growth", true, 0.0, l.growth, ""};
    AssumptionCheck pos{"loss_positive_at_infinity", true, std::numeric_limits<double>::infinity(), 0.0, ""};
    AssumptionCheck lb{"loss_reflection_bound", true, 0.0, p.driver.bound_L, ""};

    for (std::size_t i = 0; i < times.size(); ++i) {
        const double t = times[i];
        for (std::size_t a = 0; a < levels.size(); ++a) {
            const double la = l(t, levels[a]);
            for (std::size_t b = a + 1; b < levels.size(); ++b) {
                const double slope = (l(t, levels[b]) - la) / (levels[b] - levels[a]);
                if (slope < lo.value) {
                    lo.value = slope;
                    lo.witness = fmt({{"t", t}, {"y1", levels[a]}, {"y2", levels[b]}, {"slope", slope}});
                }
                if (slope > hi.value) {
                    hi.value = slope;
                    hi.witness = fmt({{"t", t}, {"y1", levels[a]}, {"y2", levels[b]}, {"slope", slope}});
                }
            }
            const double g = std::abs(la) / (1.0 + std::abs(levels[a]));
            if (g > gr.value) {
                gr.value = g;
                gr.witness = fmt({{"t", t}, {"y", levels[a]}, {"|l|/(1+|y|)", g}});
            }
            if (i + 1 < times.size()) {
                const double r = std::abs(l(times[i + 1], levels[a]) - la) / (times[i + 1] - t);
                if (r > tl.value) {
                    tl.value = r;
                    tl.witness = fmt({{"t1", t}, {"t2", times[i + 1]}, {"y", levels[a]}, {"rate", r}});
                }
            }
        }
        const double at_r = l(t, opt.probe_range);
        if (at_r < pos.value) {
            pos.value = at_r;
            pos.witness = fmt({{"t", t}, {"R", opt.probe_range}, {"l(t,R)", at_r}});
        }
        try {
            const double zero = 0.0, one = 1.0;
            const double l0 = l_operator(l, t, std::span<const double>(&zero, 1), std::span<const double>(&one, 1));
            if (l0 > lb.value) {
                lb.value = l0;
                lb.witness = fmt({{"t", t}, {"L_t(0)", l0}});
            }
        } catch (const BracketNotFound& e) {
            lb.passed = false;
            lb.witness = e.what();
        }
    }
    lo.passed = lo.value > 0.0 && lo.value >= l.kappa_lower * (1.0 - 1e-9) - 1e-12;
    hi.passed = hi.value <= l.kappa_upper * (1.0 + 1e-9) + 1e-12;
    tl.passed = tl.value <= l.time_lipschitz * (1.0 + 1e-9) + 1e-9;
    gr.passed = gr.value <= l.growth * (1.0 + 1e-9) + 1e-12;
    pos.passed = pos.value > 0.0;
    lb.passed = lb.passed && lb.value <= p.driver.bound_L + 1e-9;
    for (auto* c : {&lo, &hi, &tl, &gr, &pos, &lb}) rep.checks.push_back(*c);
}

}  // namespace

ValidationReport validate_problem(const Problem& problem, const ValidationOptions& opt) {
    ValidationReport rep;
    check_terminal(problem, opt, rep);
    check_driver(problem, opt, rep);
    check_loss(problem, opt, rep);
    return rep;
}

ValidationReport validate_problem(const RunConfig& config) {
    ValidationOptions opt;
    opt.enumeration_cap = config.solver.enumeration_cap;
    opt.pilot_scenarios = config.experiment.validation_pilot;
    opt.seed = config.master_seed ^ 0x5A11DULL;
    opt.probe_range = config.solver.bisection_range;
    return validate_problem(build_problem(config), opt);
}

}  // namespace mrbsdej
