#pragma once

#include "mrbsdej/bsdej_core.hpp"
#include "mrbsdej/mean_reflected.hpp"
#include "mrbsdej/particle_system.hpp"
#include "mrbsdej/problem.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mrbsdej {

struct LimitOptions {
    std::size_t enumeration_cap = kDefaultEnumerationCap;
    std::size_t mc_scenarios = 400'000;  ///< used when the marginal tree exceeds the cap
    std::uint64_t seed = 0x5EEDULL;
    RegressionOptions regression;
    ReflectionOptions reflection;
    std::optional<PicardConfig> picard;  ///< default: compute_picard_window
};

/// The McKean-Vlasov limit solved once, on the marginal exact tree when it fits the
/// enumeration cap and on a large Monte Carlo ensemble otherwise.
struct LimitSolution {
    std::unique_ptr<PathEnsemble> ensemble;
    std::unique_ptr<ConditionalExpectation> ce;
    SolutionTriple solution;
    WarningLog warnings;

    bool exact() const { return ce && ce->backend() == Backend::exact; }
};

LimitSolution solve_limit(const Problem& problem, const LimitOptions& opt);

/// Limit copies (Ybar^i, Ubar^i, K) driven by particle i's own jumps.
struct ReferenceCopies {
    std::vector<AdaptedProcess> Y;
    std::vector<AdaptedProcess> F;  ///< f(t, Ybar^i, Ubar^i) along the copy
    std::vector<PredictableField> U;
    std::vector<double> K;
    std::vector<double> dK;
};

/// Exact limit: each particle path is mapped to its node of the marginal tree.
/// Monte Carlo limit: the backward recursion is re-run on the pooled particle paths
/// with the limit's deterministic dK injected. Throws std::invalid_argument on a grid mismatch.
ReferenceCopies build_reference(const LimitSolution& limit, const Problem& problem,
                                const MultiEnsemble& multi, const RegressionOptions& regression = {});

/// Re-run variant of build_reference, also usable on exact trees (for cross-checks).
ReferenceCopies build_reference_rerun(const LimitSolution& limit, const Problem& problem,
                                      const MultiEnsemble& multi, Backend backend,
                                      const RegressionOptions& regression = {});

struct ChaosErrors {
    double err_Y = 0.0;  ///< mean_i E[max_k |Y^i_k - Ybar^i_k|^2]
    /// mean_i E[sum_k (dM^i_k - dMbar^i_k)^2] with dM the one-step martingale increment;
    /// equals the grid version of E[int sum_j |U^{ij} - Ubar^i 1{i=j}|^2 nu dt] by isometry.
    double err_U = 0.0;
    /// mean_i E[sum_k sum_j sum_a nu_a |U^{ij}_a - Ubar^i_a 1{i=j}|^2 dt] (full U only; NaN otherwise)
    double err_U_integrand = 0.0;
    double err_K = 0.0;  ///< E[max_k |K^N_k - K_k|^2]
};

ChaosErrors chaos_errors(const ParticleSolution& sol, const ReferenceCopies& ref, const MultiEnsemble& multi);

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double se = 0.0;
    double half_width = 0.0;  ///< 95% Student-t half-width
    double chi2_red = 0.0;
    int points = 0;
};

/// Weighted least squares of log(mean) on log(x) with weights (mean / se)^2; the slope
/// standard error is inflated by sqrt(chi2_red) when the scatter exceeds the error bars.
SlopeFit fit_log_slope(const std::vector<double>& x, const std::vector<double>& mean,
                       const std::vector<double>& se);

struct SweepConfig {
    std::vector<int> N_values{8, 16, 32, 64, 128, 256};
    int seeds = 10;
    std::size_t scenarios = 4000;
    std::uint64_t master_seed = 20240402;
    int jobs = 1;
    ParticleOptions particle = [] {
        ParticleOptions p;
        p.backend = Backend::regression;
        return p;
    }();
    PicardConfig picard;
    double max_failure_fraction = 0.2;
};

struct RunRecord {
    int N = 0;
    int seed_index = 0;
    std::uint64_t seed = 0;
    ChaosErrors errors;
    double runtime_s = 0.0;
    bool ok = true;
    std::string message;
    double skorokhod = 0.0;
    double skorokhod_se = 0.0;
    double min_margin = 0.0;
    int picard_iterations = 0;
};

struct MetricSummary {
    std::vector<double> mean;
    std::vector<double> se;
    SlopeFit fit;
    int inversions = 0;
};

struct RateReport {
    std::vector<int> N_values;
    std::vector<int> replicates;
    std::vector<RunRecord> runs;
    MetricSummary err_Y, err_U, err_K;
    int failures = 0;
    double runtime_s = 0.0;
    double limit_K_T = 0.0;
};

/// Runs every (N, seed) job, aggregates per N and fits the three slopes.
/// Throws std::runtime_error when more than max_failure_fraction of the jobs fail.
RateReport rate_sweep(const Problem& problem, const LimitSolution& limit, const SweepConfig& cfg,
                      const std::function<void(const RunRecord&)>& progress = {});

/// CSV columns: N,seed,err_Y,err_U,err_K,runtime_s (plus status columns).
void write_rate_csv(std::ostream& out, const RateReport& report);

/// Seed of job (N, r): independent counter-derived stream per job.
std::uint64_t job_seed(std::uint64_t master_seed, int N, int replicate);

struct RegularityReport {
    std::vector<int> steps;
    std::vector<double> dt;
    std::vector<double> k_increment;   ///< max_k |K_{k+1} - K_k|
    std::vector<double> y_increment;   ///< max_k E|y_{k+1} - y_k|^2, y = Y - (K_T - K)
    SlopeFit k_fit;                    ///< slope of log k_increment vs log dt
    SlopeFit y_fit;
};

/// Solves the limit at steps base, 2 base, 4 base, ... and fits increment exponents.
RegularityReport regularity_probe(const std::function<Problem(int steps)>& make_problem, int base_steps,
                                  int refinements, const LimitOptions& opt);

}  // namespace mrbsdej
