#pragma once

#include "mrbsdej/bsdej_core.hpp"
#include "mrbsdej/diagnostics.hpp"
#include "mrbsdej/loss_ops.hpp"

#include <span>
#include <string>
#include <vector>

namespace mrbsdej {

/// Contraction window for the Picard scheme in the frozen process P.
struct PicardConfig {
    double A0 = 0.0;
    double A = 0.0;
    double delta_A = 0.0;
    double h_hat = 0.0;     ///< min(1 / (4 lambda kappa), delta_A), or T when lambda kappa = 0
    int q = 1;              ///< ceil(T / h_hat)
    int steps_per_interval = 1;  ///< h_hat rounded down to whole grid steps (at least one)
    int max_iters = 200;
    double tol = 1e-10;
    bool operator==(const PicardConfig&) const = default;
};

PicardConfig compute_picard_window(const DriverSpec& driver, const LossSpec& loss, double horizon,
                                   int steps);

/// Grid indices k_0 = 0 < ... < k_q = n of the stitching intervals, laid out from the end.
std::vector<int> interval_boundaries(int steps, int steps_per_interval);

struct PicardRecord {
    int interval = 0;  ///< 0 is the interval ending at T
    int iteration = 0;
    double change = 0.0;  ///< grid sup-norm |Y^P - P| on the interval
    double ratio = 0.0;   ///< change / previous change (0 on the first iteration)
};

struct SolutionTriple {
    AdaptedProcess Y;
    PredictableField U;
    std::vector<double> K;        ///< deterministic, K_0 = 0
    AdaptedProcess f;             ///< driver values used in the final sweep
    std::vector<double> ell;      ///< L_{t_k}(y_k) of the final sweep, ell_n = 0
    std::vector<double> margin;   ///< E[l(t_k, Y_k)]
    std::vector<double> margin_se;  ///< Monte Carlo standard error of margin (0 on trees)
    std::vector<int> boundaries;
    std::vector<PicardRecord> picard_log;
    std::vector<double> dK;       ///< K_{k+1} - K_k
    WarningLog warnings;
};

struct ReflectionOptions {
    BisectionOptions bisection;
    SolverOptions solver;
    double terminal_tol = 1e-10;
};

/// Reflection on the steps [k0, k1) for a driver that does not see Y (it may see a
/// frozen P and u): y, u from the plain backward sweep started at `terminal`
/// (values at k1), ell_k = L_{t_k}(y_k), Y_k = y_k + max_{k <= s < k1} ell_s.
/// Writes rows k0..k1 of Y, rows k0..k1-1 of U, f and dk, and ell[k0..k1).
void reflect_interval(const ConditionalExpectation& ce, const DriverSpec& driver,
                      const AdaptedProcess* frozen_y, const LossSpec& loss,
                      std::span<const double> terminal, int k0, int k1, SolutionTriple& out,
                      const ReflectionOptions& opt = {});

/// Whole-horizon reflection for a driver without Y-dependence (or with Y frozen to P).
SolutionTriple reflect_constant_driver(const ConditionalExpectation& ce, const DriverSpec& driver,
                                       std::span<const double> terminal, const LossSpec& loss,
                                       const AdaptedProcess* frozen_y = nullptr,
                                       const ReflectionOptions& opt = {});

/// Picard iteration P -> Y^P on each stitching interval, from T backwards.
/// Throws NonConvergence with the iteration log when max_iters is reached.
SolutionTriple solve_mean_reflected(const ConditionalExpectation& ce, const DriverSpec& driver,
                                    std::span<const double> terminal, const LossSpec& loss,
                                    const PicardConfig& picard, const ReflectionOptions& opt = {});

struct FlatnessReport {
    double residual = 0.0;    ///< sum_k E[l(t_k, Y_k)]^+ (K_{k+1} - K_k)
    double min_margin = 0.0;  ///< min_k E[l(t_k, Y_k)]
};

FlatnessReport flatness_residual(const SolutionTriple& solution, const LossSpec& loss,
                                 const PathEnsemble& ensemble);

/// Fills margin and margin_se from Y.
void compute_margins(SolutionTriple& solution, const LossSpec& loss, const PathEnsemble& ensemble);

}  // namespace mrbsdej
