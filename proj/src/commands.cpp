#include "mrbsdej/commands.hpp"

#include "mrbsdej/config.hpp"
#include "mrbsdej/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace mrbsdej {

using nlohmann::json;
namespace fs = std::filesystem;

void write_file_atomic(const std::string& path, const std::string& content) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

namespace {

/// Request the caller must fix (bad config, refused grid); exit code 2.
class Refused : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationFailed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

json warnings_json(const WarningLog& log) {
    std::map<std::string, std::size_t> counts;
    for (const auto& w : log.entries) ++counts[w.code];
    json first = json::array();
    for (std::size_t i = 0; i < std::min<std::size_t>(log.entries.size(), 20); ++i)
        first.push_back({{"code", log.entries[i].code}, {"detail", log.entries[i].detail}});
    return {{"counts", counts}, {"first", first}};
}

json picard_json(const std::vector<PicardRecord>& log) {
    json a = json::array();
    for (const auto& r : log)
        a.push_back({{"interval", r.interval}, {"iteration", r.iteration}, {"change", r.change}, {"ratio", r.ratio}});
    return a;
}

json picard_config_json(const PicardConfig& p) {
    return {{"A0", p.A0},          {"A", p.A}, {"delta_A", p.delta_A}, {"h_hat", p.h_hat}, {"q", p.q},
            {"steps_per_interval", p.steps_per_interval}, {"max_iters", p.max_iters}, {"tol", p.tol}};
}

json fit_json(const SlopeFit& f) {
    return {{"slope", f.slope}, {"intercept", f.intercept}, {"se", f.se}, {"half_width", f.half_width},
            {"chi2_red", f.chi2_red}, {"points", f.points}};
}

json validation_json(const ValidationReport& rep) {
    json checks = json::array();
    for (const auto& c : rep.checks)
        checks.push_back({{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"bound", c.bound},
                          {"witness", c.witness}});
    return {{"passed", rep.passed()}, {"checks", checks}};
}

struct Context {
    RunConfig config;
    fs::path out_dir;
    bool force = false;

    std::string path(const std::string& name) const { return (out_dir / name).string(); }
    void write_json(const std::string& name, const json& j) const { write_file_atomic(path(name), j.dump(2) + "\n"); }
};

void require_valid(const Context& ctx, std::ostream& out) {
    const ValidationReport rep = validate_problem(ctx.config);
    ctx.write_json("validation.json", validation_json(rep));
    if (rep.passed()) return;
    std::string failed;
    for (const auto& c : rep.checks)
        if (!c.passed) failed += (failed.empty() ? "" : ", ") + c.name;
    if (!ctx.force) throw ValidationFailed("assumption checks failed: " + failed + " (see validation.json; --force overrides)");
    out << "warning: running despite failed checks: " << failed << "\n";
}

int cmd_validate(const Context& ctx, std::ostream& out) {
    const ValidationReport rep = validate_problem(ctx.config);
    ctx.write_json("validation.json", validation_json(rep));
    std::size_t ok = 0;
    std::string failed;
    for (const auto& c : rep.checks) {
        ok += c.passed;
        if (!c.passed) failed += " " + c.name + " [" + c.witness + "]";
    }
    out << "validate: " << (rep.passed() ? "PASS" : "FAIL") << " (" << ok << "/" << rep.checks.size()
        << " checks)" << failed << "\n";
    return rep.passed() ? kExitOk : kExitValidation;
}

int cmd_solve_single(const Context& ctx, std::ostream& out) {
    require_valid(ctx, out);
    const RunConfig& c = ctx.config;
    const Problem p = build_problem(c);
    const bool exact = c.solver.backend == "exact";
    WarningLog log;
    const PathEnsemble ens = exact ? build_exact_tree(p.model, c.solver.enumeration_cap)
                                   : sample_paths(p.model, c.solver.scenarios, counter_hash(c.master_seed, 0, 0, 1));
    const ConditionalExpectation ce(ens, exact ? Backend::exact : Backend::regression, c.solver.regression, &log);
    const PicardConfig picard = picard_config(c, p);
    const auto xi = p.terminal.values(ens);
    SolutionTriple sol = solve_mean_reflected(ce, p.driver, xi, p.loss, picard, reflection_options(c));
    compute_margins(sol, p.loss, ens);
    const FlatnessReport flat = flatness_residual(sol, p.loss, ens);
    const double recon = reconstruction_residual(ens, sol.Y, sol.U, sol.f, sol.dK);

    json rep;
    rep["backend"] = c.solver.backend;
    rep["scenarios"] = ens.size();
    rep["steps"] = p.model.steps();
    rep["time"] = [&] {
        std::vector<double> t;
        for (int k = 0; k <= p.model.steps(); ++k) t.push_back(p.model.time(k));
        return t;
    }();
    rep["K"] = sol.K;
    rep["dK"] = sol.dK;
    rep["ell"] = sol.ell;
    rep["margin"] = sol.margin;
    rep["margin_se"] = sol.margin_se;
    rep["min_margin"] = flat.min_margin;
    rep["flatness_residual"] = flat.residual;
    rep["reconstruction_residual"] = recon;
    rep["Y0_mean"] = [&] {
        double m = 0.0;
        const auto w = ens.weights();
        for (std::size_t s = 0; s < ens.size(); ++s) m += w[s] * sol.Y(0, s);
        return m;
    }();
    rep["picard"] = picard_config_json(picard);
    rep["boundaries"] = sol.boundaries;
    rep["picard_log"] = picard_json(sol.picard_log);
    for (const auto& w : sol.warnings.entries) log.add(w.code, w.detail);
    rep["warnings"] = warnings_json(log);

    std::string extra;
    // Zero driver with linear loss: K_T - K_t = max_{s >= t} (a(s) - E xi)^+ on the grid.
    if (p.loss.linear_threshold && c.problem.driver.family == "zero") {
        double exi = 0.0;
        const auto w = ens.weights();
        for (std::size_t s = 0; s < ens.size(); ++s) exi += w[s] * xi[s];
        const int n = p.model.steps();
        std::vector<double> tail(static_cast<std::size_t>(n) + 1, 0.0);
        double run = 0.0;
        for (int k = n; k >= 0; --k) {
            run = std::max(run, (*p.loss.linear_threshold)(p.model.time(k)) - exi);
            tail[static_cast<std::size_t>(k)] = run;
        }
        double err = 0.0;
        for (int k = 0; k <= n; ++k)
            err = std::max(err, std::abs(sol.K.back() - sol.K[static_cast<std::size_t>(k)] - tail[static_cast<std::size_t>(k)]));
        rep["closed_form_K_error"] = err;
        std::ostringstream os;
        os << " closed_form_err=" << err;
        extra = os.str();
    }
    ctx.write_json("solution.json", rep);

    if (c.experiment.dump_csv) {
        const std::size_t rows = ens.size() * static_cast<std::size_t>(p.model.steps() + 1);
        if (rows > c.experiment.dump_limit) {
            out << "note: CSV dump skipped (" << rows << " rows > dump_limit)\n";
        } else {
            std::ostringstream a, b;
            write_solution_csv(a, sol.Y, sol.U);
            ens.write_csv(b);
            write_file_atomic(ctx.path("solution.csv"), a.str());
            write_file_atomic(ctx.path("ensemble.csv"), b.str());
        }
    }
    out << "solve-single: K_T=" << sol.K.back() << " min_margin=" << flat.min_margin
        << " flatness=" << flat.residual << " picard_iters=" << sol.picard_log.size() << extra << "\n";
    return kExitOk;
}

int cmd_solve_particles(const Context& ctx, std::ostream& out) {
    require_valid(ctx, out);
    const RunConfig& c = ctx.config;
    const Problem p = build_problem(c);
    const int N = c.solver.particles;
    const bool exact = c.solver.backend == "exact";
    const MultiEnsemble multi = exact ? build_joint_tree(p.model, N, c.solver.enumeration_cap)
                                      : sample_particles(p.model, N, c.solver.scenarios,
                                                         counter_hash(c.master_seed, 0, 0, 2));
    const PicardConfig picard = picard_config(c, p);
    const ParticleSolution sol = solve_particles(multi, p.driver, p.terminal, p.loss, picard, particle_options(c));
    const SkorokhodReport sk = discrete_skorokhod_residual(sol, p.loss, multi);
    const double recon = particle_reconstruction_residual(sol, multi);

    const int n = sol.steps;
    const auto w = multi.weights();
    std::vector<double> k_mean(static_cast<std::size_t>(n) + 1, 0.0);
    double k_max = 0.0;
    for (int k = 0; k <= n; ++k)
        for (std::size_t s = 0; s < multi.size(); ++s) {
            k_mean[static_cast<std::size_t>(k)] += w[s] * sol.K(k, s);
            k_max = std::max(k_max, sol.K(k, s));
        }
    json rep;
    rep["backend"] = c.solver.backend;
    rep["particles"] = N;
    rep["scenarios"] = multi.size();
    rep["steps"] = n;
    rep["K_mean"] = k_mean;
    rep["K_max"] = k_max;
    rep["skorokhod_residual"] = sk.residual;
    rep["skorokhod_se"] = sk.residual_se;
    rep["min_margin"] = sk.min_margin;
    rep["reconstruction_residual"] = recon;
    rep["terminal_psi_max"] = sol.terminal_psi_max;
    rep["terminal_infeasible"] = sol.terminal_infeasible;
    rep["picard"] = picard_config_json(picard);
    rep["boundaries"] = sol.boundaries;
    rep["picard_log"] = picard_json(sol.picard_log);
    rep["warnings"] = warnings_json(sol.warnings);
    ctx.write_json("particles.json", rep);

    if (c.experiment.dump_csv) {
        const std::size_t rows = multi.size() * static_cast<std::size_t>(N) * static_cast<std::size_t>(n + 1);
        if (rows > c.experiment.dump_limit) {
            out << "note: CSV dump skipped (" << rows << " rows > dump_limit)\n";
        } else {
            std::ostringstream os;
            os.precision(17);
            os << "particle,scenario,step,Y,K\n";
            for (int i = 0; i < N; ++i)
                for (std::size_t s = 0; s < multi.size(); ++s)
                    for (int k = 0; k <= n; ++k)
                        os << i << ',' << s << ',' << k << ',' << sol.Y[static_cast<std::size_t>(i)](k, s) << ','
                           << sol.K(k, s) << '\n';
            write_file_atomic(ctx.path("particles.csv"), os.str());
        }
    }
    out << "solve-particles: N=" << N << " E[K_T]=" << k_mean.back() << " skorokhod=" << sk.residual
        << " min_margin=" << sk.min_margin << " picard_iters=" << sol.picard_log.size() << "\n";
    return kExitOk;
}

int cmd_chaos_rate(const Context& ctx, std::ostream& out) {
    const RunConfig& c = ctx.config;
    const std::set<int> distinct(c.experiment.N_values.begin(), c.experiment.N_values.end());
    if (distinct.size() < 4)
        throw Refused("chaos-rate needs at least 4 distinct N values, got " + std::to_string(distinct.size()));
    if (c.experiment.seeds < 2) throw Refused("chaos-rate needs at least 2 seeds per N");
    require_valid(ctx, out);
    const Problem p = build_problem(c);
    const LimitSolution limit = solve_limit(p, limit_options(c));

    const RateReport rep = rate_sweep(p, limit, sweep_config(c, p));

    std::ostringstream csv;
    write_rate_csv(csv, rep);
    write_file_atomic(ctx.path("chaos_rate.csv"), csv.str());

    auto metric = [](const MetricSummary& m) {
        return json{{"mean", m.mean}, {"se", m.se}, {"fit", fit_json(m.fit)}, {"inversions", m.inversions}};
    };
    json failures = json::array();
    for (const auto& r : rep.runs)
        if (!r.ok) failures.push_back({{"N", r.N}, {"seed", r.seed}, {"message", r.message}});
    json j{{"N_values", rep.N_values},
           {"replicates", rep.replicates},
           {"scenarios", c.experiment.scenarios},
           {"steps", p.model.steps()},
           {"limit_backend", limit.exact() ? "exact" : "mc"},
           {"limit_K_T", rep.limit_K_T},
           {"particle_backend", c.solver.backend},
           {"err_Y", metric(rep.err_Y)},
           {"err_U", metric(rep.err_U)},
           {"err_K", metric(rep.err_K)},
           {"failures", failures},
           {"runtime_s", rep.runtime_s},
           {"limit_warnings", warnings_json(limit.warnings)}};
    ctx.write_json("chaos_rate.json", j);
    out << "chaos-rate: slope_Y=" << rep.err_Y.fit.slope << "+-" << rep.err_Y.fit.half_width
        << " slope_U=" << rep.err_U.fit.slope << "+-" << rep.err_U.fit.half_width << " slope_K=" << rep.err_K.fit.slope
        << "+-" << rep.err_K.fit.half_width << " failures=" << rep.failures << " runtime_s=" << rep.runtime_s << "\n";
    return kExitOk;
}

int cmd_probe_regularity(const Context& ctx, std::ostream& out) {
    require_valid(ctx, out);
    const RunConfig& c = ctx.config;
    LimitOptions opt = limit_options(c);
    opt.picard.reset();  // each grid gets its own window
    const RegularityReport rep =
        regularity_probe([&](int steps) { return build_problem(c, steps); }, c.experiment.regularity_base_steps,
                         c.experiment.regularity_refinements, opt);
    std::ostringstream csv;
    csv.precision(17);
    csv << "steps,dt,k_increment,y_increment\n";
    for (std::size_t i = 0; i < rep.steps.size(); ++i)
        csv << rep.steps[i] << ',' << rep.dt[i] << ',' << rep.k_increment[i] << ',' << rep.y_increment[i] << '\n';
    write_file_atomic(ctx.path("regularity.csv"), csv.str());
    ctx.write_json("regularity.json", {{"steps", rep.steps},
                                       {"dt", rep.dt},
                                       {"k_increment", rep.k_increment},
                                       {"y_increment", rep.y_increment},
                                       {"k_fit", fit_json(rep.k_fit)},
                                       {"y_fit", fit_json(rep.y_fit)}});
    out << "probe-regularity: k_slope=" << rep.k_fit.slope << " y_slope=" << rep.y_fit.slope << "\n";
    return kExitOk;
}

}  // namespace

int run_subcommand(const std::string& name, const CommandOptions& options, std::ostream& out, std::ostream& err) {
    static const std::set<std::string> known{"validate", "solve-single", "solve-particles", "chaos-rate",
                                             "probe-regularity"};
    fs::path out_dir = options.out_dir.value_or("out");
    auto report_error = [&](const std::string& type, const std::string& message,
                            const std::vector<std::string>& log, int code) {
        const json e{{"error", type}, {"message", message}, {"subcommand", name}, {"exit_code", code}, {"log", log}};
        err << e.dump() << "\n";
        try {
            write_file_atomic((out_dir / "error.json").string(), e.dump(2) + "\n");
        } catch (const std::exception&) {
            // the report on stderr is authoritative when the directory is unusable
        }
        return code;
    };
    if (!known.count(name)) return report_error("unknown_subcommand", "unknown subcommand '" + name + "'", {}, kExitConfig);
    try {
        Context ctx;
        ctx.config = load_config(options.config_path);
        if (options.seed) ctx.config.master_seed = *options.seed;
        if (options.backend) ctx.config.solver.backend = *options.backend;
        if (options.jobs) ctx.config.experiment.jobs = *options.jobs;
        check_config(ctx.config);
        out_dir = options.out_dir.value_or(ctx.config.experiment.output_dir);
        ctx.out_dir = out_dir;
        ctx.force = options.force;
        fs::create_directories(out_dir);
        write_file_atomic(ctx.path("config.json"), serialize_config(ctx.config));
        if (name == "validate") return cmd_validate(ctx, out);
        if (name == "solve-single") return cmd_solve_single(ctx, out);
        if (name == "solve-particles") return cmd_solve_particles(ctx, out);
        if (name == "chaos-rate") return cmd_chaos_rate(ctx, out);
        return cmd_probe_regularity(ctx, out);
    } catch (const ConfigError& e) {
        return report_error("config_error", e.what(), {}, kExitConfig);
    } catch (const Refused& e) {
        return report_error("refused", e.what(), {}, kExitConfig);
    } catch (const ValidationFailed& e) {
        return report_error("validation_failed", e.what(), {}, kExitValidation);
    } catch (const NonConvergence& e) {
        return report_error("non_convergence", e.what(), e.log, kExitFailure);
    } catch (const EnumerationCapExceeded& e) {
        return report_error("enumeration_cap_exceeded", e.what(), {}, kExitConfig);
    } catch (const std::invalid_argument& e) {
        return report_error("invalid_argument", e.what(), {}, kExitConfig);
    } catch (const std::exception& e) {
        return report_error("runtime_error", e.what(), {}, kExitFailure);
    }
}

}  // namespace mrbsdej
