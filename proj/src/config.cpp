#include "mrbsdej/config.hpp"

#include "mrbsdej/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace mrbsdej {

using nlohmann::json;

namespace {

/// Reads the keys of one JSON object and rejects any key nobody asked for.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    template <class T>
    void get(const char* key, std::optional<T>& out) {
        seen_.insert(key);
        if (!j_.contains(key) || j_.at(key).is_null()) return;
        T v{};
        get(key, v);
        out = v;
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

template <class T>
json opt_json(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

void read(const json& j, ThresholdConfig& c) {
    ObjectReader r(j, "problem.loss.threshold");
    r.get("kind", c.kind);
    r.get("a0", c.a0);
    r.get("a1", c.a1);
    r.get("amplitude", c.amplitude);
    r.get("frequency", c.frequency);
    r.finish();
}

void read(const json& j, ProblemConfig& p) {
    ObjectReader r(j, "problem");
    if (const json* m = r.child("jump_model")) {
        ObjectReader rm(*m, "problem.jump_model");
        rm.get("marks", p.jump_model.marks);
        rm.get("intensities", p.jump_model.intensities);
        rm.get("horizon", p.jump_model.horizon);
        rm.get("steps", p.jump_model.steps);
        rm.finish();
    }
    if (const json* l = r.child("loss")) {
        ObjectReader rl(*l, "problem.loss");
        rl.get("family", p.loss.family);
        rl.get("scale", p.loss.scale);
        rl.get("slope_below", p.loss.slope_below);
        rl.get("slope_above", p.loss.slope_above);
        if (const json* th = rl.child("threshold")) read(*th, p.loss.threshold);
        rl.get("table_path", p.loss.table_path);
        rl.get("kappa_lower", p.loss.kappa_lower);
        rl.get("kappa_upper", p.loss.kappa_upper);
        rl.get("time_lipschitz", p.loss.time_lipschitz);
        rl.get("growth", p.loss.growth);
        rl.finish();
    }
    if (const json* d = r.child("driver")) {
        ObjectReader rd(*d, "problem.driver");
        rd.get("family", p.driver.family);
        rd.get("a", p.driver.a);
        rd.get("b", p.driver.b);
        rd.get("c", p.driver.c);
        rd.get("amplitude", p.driver.amplitude);
        rd.get("frequency", p.driver.frequency);
        rd.get("kink", p.driver.kink);
        rd.get("kink_at", p.driver.kink_at);
        rd.get("lipschitz", p.driver.lipschitz);
        rd.get("bound", p.driver.bound);
        rd.finish();
    }
    if (const json* t = r.child("terminal")) {
        ObjectReader rt(*t, "problem.terminal");
        rt.get("family", p.terminal.family);
        rt.get("offset", p.terminal.offset);
        rt.get("scale", p.terminal.scale);
        rt.get("centered", p.terminal.centered);
        rt.get("clip", p.terminal.clip);
        rt.finish();
    }
    r.finish();
}

void read(const json& j, SolverConfig& s) {
    ObjectReader r(j, "solver");
    r.get("backend", s.backend);
    r.get("enumeration_cap", s.enumeration_cap);
    r.get("scenarios", s.scenarios);
    r.get("limit_scenarios", s.limit_scenarios);
    r.get("particles", s.particles);
    if (const json* g = r.child("regression")) {
        ObjectReader rg(*g, "solver.regression");
        rg.get("degree", s.regression.degree);
        rg.get("ridge", s.regression.ridge);
        rg.get("rank_tol", s.regression.rank_tol);
        rg.finish();
    }
    r.get("bisection_tol", s.bisection_tol);
    r.get("bisection_range", s.bisection_range);
    r.get("implicit_max_iters", s.implicit_max_iters);
    r.get("implicit_tol", s.implicit_tol);
    r.get("picard_max_iters", s.picard_max_iters);
    r.get("picard_tol", s.picard_tol);
    r.get("steps_per_interval", s.steps_per_interval);
    r.get("terminal_tol", s.terminal_tol);
    r.get("snell_basis", s.snell_basis);
    r.get("stitch", s.stitch);
    r.finish();
}

void read(const json& j, ExperimentConfig& e) {
    ObjectReader r(j, "experiment");
    r.get("N_values", e.N_values);
    r.get("seeds", e.seeds);
    r.get("scenarios", e.scenarios);
    r.get("jobs", e.jobs);
    r.get("max_failure_fraction", e.max_failure_fraction);
    r.get("regularity_base_steps", e.regularity_base_steps);
    r.get("regularity_refinements", e.regularity_refinements);
    r.get("output_dir", e.output_dir);
    r.get("dump_csv", e.dump_csv);
    r.get("dump_limit", e.dump_limit);
    r.get("validation_pilot", e.validation_pilot);
    r.finish();
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

Threshold make_threshold(const ThresholdConfig& c) {
    Threshold th;
    th.kind = c.kind == "sine" ? Threshold::Kind::sine : Threshold::Kind::affine;
    th.a0 = c.a0;
    th.a1 = c.a1;
    th.amplitude = c.amplitude;
    th.frequency = c.frequency;
    return th;
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    ObjectReader r(j, "config");
    if (const json* p = r.child("problem")) read(*p, c.problem);
    if (const json* s = r.child("solver")) read(*s, c.solver);
    if (const json* e = r.child("experiment")) read(*e, c.experiment);
    r.get("master_seed", c.master_seed);
    r.finish();
    check_config(c);
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig c = parse_config(ss.str());
    // Table paths are relative to the config file.
    auto& table = c.problem.loss.table_path;
    if (!table.empty() && std::filesystem::path(table).is_relative())
        table = (std::filesystem::path(path).parent_path() / table).lexically_normal().string();
    return c;
}

std::string serialize_config(const RunConfig& c) {
    const auto& p = c.problem;
    const auto& s = c.solver;
    const auto& e = c.experiment;
    json j;
    j["master_seed"] = c.master_seed;
    j["problem"]["jump_model"] = {{"marks", p.jump_model.marks},
                                  {"intensities", p.jump_model.intensities},
                                  {"horizon", p.jump_model.horizon},
                                  {"steps", p.jump_model.steps}};
    j["problem"]["loss"] = {{"family", p.loss.family},
                            {"scale", p.loss.scale},
                            {"slope_below", p.loss.slope_below},
                            {"slope_above", p.loss.slope_above},
                            {"threshold",
                             {{"kind", p.loss.threshold.kind},
                              {"a0", p.loss.threshold.a0},
                              {"a1", p.loss.threshold.a1},
                              {"amplitude", p.loss.threshold.amplitude},
                              {"frequency", p.loss.threshold.frequency}}},
                            {"table_path", p.loss.table_path},
                            {"kappa_lower", p.loss.kappa_lower},
                            {"kappa_upper", p.loss.kappa_upper},
                            {"time_lipschitz", p.loss.time_lipschitz},
                            {"growth", p.loss.growth}};
    j["problem"]["driver"] = {{"family", p.driver.family},       {"a", p.driver.a},
                              {"b", p.driver.b},                 {"c", p.driver.c},
                              {"amplitude", p.driver.amplitude}, {"frequency", p.driver.frequency},
                              {"kink", p.driver.kink},           {"kink_at", p.driver.kink_at},
                              {"lipschitz", opt_json(p.driver.lipschitz)},
                              {"bound", opt_json(p.driver.bound)}};
    j["problem"]["terminal"] = {{"family", p.terminal.family},
                                {"offset", p.terminal.offset},
                                {"scale", p.terminal.scale},
                                {"centered", p.terminal.centered},
                                {"clip", p.terminal.clip}};
    j["solver"] = {{"backend", s.backend},
                   {"enumeration_cap", s.enumeration_cap},
                   {"scenarios", s.scenarios},
                   {"limit_scenarios", s.limit_scenarios},
                   {"particles", s.particles},
                   {"regression",
                    {{"degree", s.regression.degree},
                     {"ridge", s.regression.ridge},
                     {"rank_tol", s.regression.rank_tol}}},
                   {"bisection_tol", s.bisection_tol},
                   {"bisection_range", s.bisection_range},
                   {"implicit_max_iters", s.implicit_max_iters},
                   {"implicit_tol", s.implicit_tol},
                   {"picard_max_iters", s.picard_max_iters},
                   {"picard_tol", s.picard_tol},
                   {"steps_per_interval", opt_json(s.steps_per_interval)},
                   {"terminal_tol", s.terminal_tol},
                   {"snell_basis", s.snell_basis},
                   {"stitch", s.stitch}};
    j["experiment"] = {{"N_values", e.N_values},
                       {"seeds", e.seeds},
                       {"scenarios", e.scenarios},
                       {"jobs", e.jobs},
                       {"max_failure_fraction", e.max_failure_fraction},
                       {"regularity_base_steps", e.regularity_base_steps},
                       {"regularity_refinements", e.regularity_refinements},
                       {"output_dir", e.output_dir},
                       {"dump_csv", e.dump_csv},
                       {"dump_limit", e.dump_limit},
                       {"validation_pilot", e.validation_pilot}};
    return j.dump(2) + "\n";
}

void check_config(const RunConfig& c) {
    const auto& jm = c.problem.jump_model;
    require(!jm.marks.empty() && jm.marks.size() == jm.intensities.size(),
            "jump_model: marks and intensities must be non-empty and of equal length");
    require(jm.horizon > 0.0 && std::isfinite(jm.horizon), "jump_model.horizon must be positive");
    require(jm.steps >= 1, "jump_model.steps must be >= 1");
    double total = 0.0;
    for (double nu : jm.intensities) {
        require(nu >= 0.0 && std::isfinite(nu), "jump_model.intensities must be finite and >= 0");
        total += nu;
    }
    require(total * jm.horizon / jm.steps < 1.0, "jump_model: sum nu_j dt must be < 1");

    const auto& l = c.problem.loss;
    require(l.threshold.kind == "affine" || l.threshold.kind == "sine", "loss.threshold.kind must be affine|sine");
    if (l.family == "linear") {
        require(l.scale > 0.0, "loss.scale must be positive");
    } else if (l.family == "affine-threshold") {
        require(l.slope_below > 0.0 && l.slope_above > 0.0, "loss slopes must be positive");
    } else if (l.family == "custom-table") {
        require(!l.table_path.empty(), "loss.table_path is required for custom-table");
        require(l.kappa_lower > 0.0 && l.kappa_upper >= l.kappa_lower, "loss: need kappa_upper >= kappa_lower > 0");
        require(l.time_lipschitz >= 0.0 && l.growth > 0.0, "loss: time_lipschitz >= 0 and growth > 0 required");
    } else {
        throw ConfigError("loss.family must be linear|affine-threshold|custom-table");
    }

    const auto& d = c.problem.driver;
    const bool extra_y = d.b != 0.0 || d.c != 0.0;
    if (d.family == "zero")
        require(d.a == 0.0 && !extra_y && d.amplitude == 0.0 && d.kink == 0.0, "driver zero takes no coefficients");
    else if (d.family == "constant")
        require(!extra_y && d.amplitude == 0.0 && d.kink == 0.0, "driver constant takes only 'a'");
    else if (d.family == "linear")
        require(d.amplitude == 0.0 && d.kink == 0.0, "driver linear takes a, b, c");
    else if (d.family == "sine")
        require(d.kink == 0.0, "driver sine takes a, amplitude, frequency, b, c");
    else
        require(d.family == "kinked", "driver.family must be zero|constant|linear|sine|kinked");
    require(!d.lipschitz || *d.lipschitz >= 0.0, "driver.lipschitz must be >= 0");
    require(!d.bound || *d.bound >= 0.0, "driver.bound must be >= 0");

    const auto& t = c.problem.terminal;
    require(t.family == "compound" || t.family == "constant", "terminal.family must be compound|constant");
    require(t.clip > 0.0, "terminal.clip must be positive");

    const auto& s = c.solver;
    require(s.backend == "exact" || s.backend == "mc", "solver.backend must be exact|mc");
    require(s.snell_basis == "standard" || s.snell_basis == "extended", "solver.snell_basis must be standard|extended");
    require(s.scenarios >= 2 && s.limit_scenarios >= 2, "solver scenario counts must be >= 2");
    require(s.particles >= 1, "solver.particles must be >= 1");
    require(s.regression.degree >= 1 && s.regression.degree <= 3, "solver.regression.degree must be 1..3");
    require(s.regression.ridge > 0.0 && s.regression.rank_tol > 0.0, "regression ridge and rank_tol must be positive");
    require(s.bisection_tol > 0.0 && s.bisection_range > 0.0, "bisection tolerances must be positive");
    require(s.implicit_max_iters >= 1 && s.implicit_tol > 0.0, "implicit solver settings must be positive");
    require(s.picard_max_iters >= 1 && s.picard_tol > 0.0, "picard settings must be positive");
    require(!s.steps_per_interval || *s.steps_per_interval >= 1, "solver.steps_per_interval must be >= 1");
    require(s.terminal_tol >= 0.0, "solver.terminal_tol must be >= 0");

    const auto& e = c.experiment;
    for (int N : e.N_values) require(N >= 1, "experiment.N_values must be >= 1");
    require(e.seeds >= 1 && e.scenarios >= 2 && e.jobs >= 1, "experiment seeds, scenarios, jobs must be positive");
    require(e.max_failure_fraction >= 0.0 && e.max_failure_fraction <= 1.0,
            "experiment.max_failure_fraction must be in [0, 1]");
    require(e.regularity_base_steps >= 1 && e.regularity_refinements >= 2, "regularity grid needs >= 2 refinements");
    require(e.validation_pilot >= 2, "experiment.validation_pilot must be >= 2");
}

Problem build_problem(const RunConfig& config, std::optional<int> steps) {
    const auto& pc = config.problem;
    const auto& jm = pc.jump_model;
    Problem p{JumpModel(jm.marks, jm.intensities, jm.horizon, steps.value_or(jm.steps)), {}, {}, {}};

    const auto& lc = pc.loss;
    if (lc.family == "linear")
        p.loss = make_linear_loss(lc.scale, make_threshold(lc.threshold));
    else if (lc.family == "affine-threshold")
        p.loss = make_affine_threshold_loss(lc.slope_below, lc.slope_above, make_threshold(lc.threshold));
    else
        p.loss = make_table_loss(load_loss_table(lc.table_path), lc.kappa_lower, lc.kappa_upper, lc.time_lipschitz,
                                 lc.growth);

    const auto& dc = pc.driver;
    const std::vector<double> nu = jm.intensities;
    double nu_sum = 0.0;
    for (double v : nu) nu_sum += v;
    const double two_pi_f = 2.0 * std::numbers::pi * dc.frequency;
    p.driver.evaluate = [dc, nu, two_pi_f](double t, double y, std::span<const double> u) {
        double ju = 0.0;
        for (std::size_t j = 0; j < u.size(); ++j) ju += nu[j] * u[j];
        double f = dc.a + dc.b * y + dc.c * ju;
        if (dc.amplitude != 0.0) f += dc.amplitude * std::sin(two_pi_f * t);
        if (dc.kink != 0.0) f += dc.kink * std::max(y - dc.kink_at, 0.0);
        return f;
    };
    // |c sum nu_j du_j| <= |c| sqrt(sum nu_j) |du|_nu by Cauchy-Schwarz.
    const double lambda_y = std::max(std::abs(dc.b), std::abs(dc.b + dc.kink));
    const double lambda_u = std::abs(dc.c) * std::sqrt(nu_sum);
    p.driver.lipschitz_lambda = dc.lipschitz.value_or(std::max(lambda_y, lambda_u));
    p.driver.bound_L =
        dc.bound.value_or(std::abs(dc.a) + std::abs(dc.amplitude) + std::abs(dc.kink) * std::max(-dc.kink_at, 0.0));
    p.driver.depends_on_y = dc.b != 0.0 || dc.kink != 0.0;
    p.driver.depends_on_u = dc.c != 0.0;

    const auto& tc = pc.terminal;
    if (tc.family == "constant") {
        const double v = std::clamp(tc.offset, -tc.clip, tc.clip);
        p.terminal.evaluate = [v](std::span<const std::uint16_t>) { return v; };
        p.terminal.bound_M = std::abs(v);
    } else {
        std::vector<double> centre(jm.marks.size(), 0.0);
        if (tc.centered)
            for (std::size_t j = 0; j < centre.size(); ++j) centre[j] = nu[j] * jm.horizon;
        const std::vector<double> marks = jm.marks;
        p.terminal.evaluate = [tc, marks, centre](std::span<const std::uint16_t> counts) {
            double x = 0.0;
            for (std::size_t j = 0; j < counts.size(); ++j) x += marks[j] * (counts[j] - centre[j]);
            return std::clamp(tc.offset + tc.scale * x, -tc.clip, tc.clip);
        };
        p.terminal.bound_M = tc.clip;
    }
    return p;
}

ReflectionOptions reflection_options(const RunConfig& c) {
    ReflectionOptions o;
    o.bisection = {c.solver.bisection_tol, c.solver.bisection_range};
    o.solver.implicit_max_iters = c.solver.implicit_max_iters;
    o.solver.implicit_tol = c.solver.implicit_tol;
    o.terminal_tol = c.solver.terminal_tol;
    return o;
}

ParticleOptions particle_options(const RunConfig& c) {
    ParticleOptions o;
    o.backend = c.solver.backend == "mc" ? Backend::regression : Backend::exact;
    o.regression = c.solver.regression;
    o.snell_basis = c.solver.snell_basis == "extended" ? SnellBasis::extended : SnellBasis::standard;
    o.bisection = {c.solver.bisection_tol, c.solver.bisection_range};
    o.stitch = c.solver.stitch;
    return o;
}

PicardConfig picard_config(const RunConfig& c, const Problem& problem) {
    PicardConfig pc = compute_picard_window(problem.driver, problem.loss, problem.model.horizon(),
                                            problem.model.steps());
    pc.max_iters = c.solver.picard_max_iters;
    pc.tol = c.solver.picard_tol;
    if (c.solver.steps_per_interval) {
        pc.steps_per_interval = std::min(*c.solver.steps_per_interval, problem.model.steps());
        pc.q = (problem.model.steps() + pc.steps_per_interval - 1) / pc.steps_per_interval;
    }
    return pc;
}

LimitOptions limit_options(const RunConfig& c) {
    LimitOptions o;
    o.enumeration_cap = c.solver.enumeration_cap;
    o.mc_scenarios = c.solver.limit_scenarios;
    o.seed = counter_hash(c.master_seed, 0, 0, 0x11A11ULL);
    o.regression = c.solver.regression;
    o.reflection = reflection_options(c);
    o.picard = picard_config(c, build_problem(c));
    return o;
}

bool ValidationReport::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const AssumptionCheck& c) { return c.passed; });
}

SweepConfig sweep_config(const RunConfig& c, const Problem& p) {
    SweepConfig sweep;
    sweep.N_values = c.experiment.N_values;
    sweep.seeds = c.experiment.seeds;
    sweep.scenarios = c.experiment.scenarios;
    sweep.master_seed = c.master_seed;
    sweep.jobs = c.experiment.jobs;
    sweep.particle = particle_options(c);
    sweep.picard = picard_config(c, p);
    sweep.max_failure_fraction = c.experiment.max_failure_fraction;
    return sweep;
}

}  // namespace mrbsdej
