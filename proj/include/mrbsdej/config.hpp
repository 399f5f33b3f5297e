#pragma once

#include "mrbsdej/chaos_lab.hpp"
#include "mrbsdej/problem.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mrbsdej {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct JumpModelConfig {
    std::vector<double> marks{1.0};
    std::vector<double> intensities{1.0};
    double horizon = 1.0;
    int steps = 16;
    bool operator==(const JumpModelConfig&) const = default;
};

struct ThresholdConfig {
    std::string kind = "affine";  ///< affine | sine
    double a0 = 0.0;
    double a1 = 0.0;
    double amplitude = 0.0;
    double frequency = 1.0;
    bool operator==(const ThresholdConfig&) const = default;
};

/// linear:           l = scale (y - a(t))
/// affine-threshold: slope_below (y - a(t)) below a(t), slope_above (y - a(t)) above
/// custom-table:     bilinear table from a CSV file (t, y, l) with declared certificates
struct LossConfig {
    std::string family = "linear";
    double scale = 1.0;
    double slope_below = 1.0;
    double slope_above = 1.0;
    ThresholdConfig threshold;
    std::string table_path;
    double kappa_lower = 1.0;
    double kappa_upper = 1.0;
    double time_lipschitz = 0.0;
    double growth = 1.0;
    bool operator==(const LossConfig&) const = default;
};

/// f(t, y, u) = a + amplitude sin(2 pi frequency t) + b y + c sum_j nu_j u_j + kink max(y - kink_at, 0)
/// family zero | constant | linear | sine | kinked selects which coefficients may be nonzero.
/// lipschitz / bound override the computed lambda and L (they are then checked by validate).
struct DriverConfig {
    std::string family = "zero";
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
    double amplitude = 0.0;
    double frequency = 1.0;
    double kink = 0.0;
    double kink_at = 0.0;
    std::optional<double> lipschitz;
    std::optional<double> bound;
    bool operator==(const DriverConfig&) const = default;
};

/// compound: xi = clip(offset + scale sum_j x_j (N^j_T - centered * nu_j T), -clip, clip)
/// constant: xi = offset
struct TerminalConfig {
    std::string family = "compound";
    double offset = 0.0;
    double scale = 1.0;
    bool centered = true;
    double clip = 16.0;
    bool operator==(const TerminalConfig&) const = default;
};

struct ProblemConfig {
    JumpModelConfig jump_model;
    LossConfig loss;
    DriverConfig driver;
    TerminalConfig terminal;
    bool operator==(const ProblemConfig&) const = default;
};

struct SolverConfig {
    std::string backend = "exact";  ///< exact | mc
    std::size_t enumeration_cap = kDefaultEnumerationCap;
    std::size_t scenarios = 4000;           ///< Monte Carlo paths (per particle)
    std::size_t limit_scenarios = 400'000;  ///< Monte Carlo paths of the limit when the tree is too big
    int particles = 2;                      ///< N for solve-particles
    RegressionOptions regression;
    double bisection_tol = 1e-10;
    double bisection_range = 1e6;
    int implicit_max_iters = 100;
    double implicit_tol = 1e-13;
    int picard_max_iters = 200;
    double picard_tol = 1e-10;
    std::optional<int> steps_per_interval;  ///< overrides the computed contraction window
    double terminal_tol = 1e-10;
    std::string snell_basis = "standard";  ///< standard | extended
    bool stitch = true;
    bool operator==(const SolverConfig&) const = default;
};

struct ExperimentConfig {
    std::vector<int> N_values{8, 16, 32, 64, 128, 256};
    int seeds = 10;
    std::size_t scenarios = 4000;
    int jobs = 1;
    double max_failure_fraction = 0.2;
    int regularity_base_steps = 2;
    int regularity_refinements = 4;
    std::string output_dir = "out";
    bool dump_csv = false;
    std::size_t dump_limit = 5'000'000;  ///< size guard on full CSV dumps (rows)
    std::size_t validation_pilot = 20000;  ///< Monte Carlo pilot size for terminal feasibility
    bool operator==(const ExperimentConfig&) const = default;
};

struct RunConfig {
    ProblemConfig problem;
    SolverConfig solver;
    ExperimentConfig experiment;
    std::uint64_t master_seed = 20240402;
    bool operator==(const RunConfig&) const = default;
};

/// JSON text -> RunConfig; unknown keys and out-of-range constants throw ConfigError.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& config);

/// Throws ConfigError on violated invariants (positivity, sum nu dt < 1, kappa ordering).
void check_config(const RunConfig& config);

/// Builds the problem on `steps` grid steps (default: the configured grid).
Problem build_problem(const RunConfig& config, std::optional<int> steps = std::nullopt);

ReflectionOptions reflection_options(const RunConfig& config);
ParticleOptions particle_options(const RunConfig& config);
PicardConfig picard_config(const RunConfig& config, const Problem& problem);
LimitOptions limit_options(const RunConfig& config);
SweepConfig sweep_config(const RunConfig& config, const Problem& problem);

struct AssumptionCheck {
    std::string name;
    bool passed = true;
    double value = 0.0;   ///< worst observed quantity
    double bound = 0.0;   ///< declared constant it is compared with
    std::string witness;  ///< where the worst case was observed
};

struct ValidationReport {
    std::vector<AssumptionCheck> checks;
    bool passed() const;
};

struct ValidationOptions {
    std::size_t enumeration_cap = kDefaultEnumerationCap;
    std::size_t pilot_scenarios = 20000;
    std::uint64_t seed = 1;
    double probe_range = 1e6;  ///< R for E[l(t, R)] > 0
    int time_points = 33;
    int level_points = 41;
    double level_span = 50.0;  ///< y-probe grid covers [-span, span]
};

/// Checks terminal feasibility (pilot ensemble, 3 standard errors on Monte Carlo), the
/// bounds M and L, and samples the driver and loss certificates on a deterministic grid.
ValidationReport validate_problem(const Problem& problem, const ValidationOptions& opt = {});
ValidationReport validate_problem(const RunConfig& config);

}  // namespace mrbsdej
