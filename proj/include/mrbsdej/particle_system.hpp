#pragma once

#include "mrbsdej/bsdej_core.hpp"
#include "mrbsdej/diagnostics.hpp"
#include "mrbsdej/jump_model.hpp"
#include "mrbsdej/loss_ops.hpp"
#include "mrbsdej/mean_reflected.hpp"

#include <functional>
#include <span>
#include <vector>

namespace mrbsdej {

/// Snell regression basis on the Monte Carlo backend: {1, mean y, mean l(t, y), mean y^2},
/// optionally extended by psi and (mean y)^2.
enum class SnellBasis { standard, extended };

struct ParticleOptions {
    Backend backend = Backend::exact;
    RegressionOptions regression;
    SnellBasis snell_basis = SnellBasis::standard;
    BisectionOptions bisection;
    /// Split the horizon into the Picard window's intervals and restart from the
    /// computed Y at each interval end.
    bool stitch = true;
    bool operator==(const ParticleOptions&) const = default;
};

struct ParticleSolution {
    int particles = 0;
    int steps = 0;
    std::size_t scenarios = 0;
    bool full_u = false;  ///< U^{i,j} for all pairs (exact backend) or only U^{i,i}

    std::vector<AdaptedProcess> Y;
    std::vector<AdaptedProcess> F;  ///< driver values f(t_k, P^i_k, Q^{ii}_k) of the final sweep
    std::vector<PredictableField> U;
    /// Part of the martingale increment of Y^i that simultaneous jumps of two or more
    /// particles carry and that no single-driver integrand can represent (exact backend).
    std::vector<AdaptedProcess> remainder;

    AdaptedProcess psi;
    AdaptedProcess S;   ///< Snell envelope of psi on each stitching interval
    AdaptedProcess K;   ///< K_0 = 0, nondecreasing along every scenario
    AdaptedProcess dK;  ///< K_{k+1} - K_k, rows 0..n-1

    std::vector<int> boundaries;
    std::vector<PicardRecord> picard_log;
    WarningLog warnings;
    double terminal_psi_max = 0.0;
    std::size_t terminal_infeasible = 0;  ///< scenarios whose terminal cloud violates the constraint

    const PredictableField& u(int i, int j) const;
};

/// Empirical reflection psi_k(s) = L^N over (y^1_k(s), ..., y^N_k(s)) for k in [k0, k1].
void psi_process(const LossSpec& loss, const JumpModel& model, const std::vector<AdaptedProcess>& y,
                 int k0, int k1, AdaptedProcess& psi, const BisectionOptions& opt = {});
AdaptedProcess psi_process(const LossSpec& loss, const JumpModel& model,
                           const std::vector<AdaptedProcess>& y, const BisectionOptions& opt = {});

/// E[next | F_k] on the joint scenario index, as out[s].
using ScenarioExpectation = std::function<void(int k, std::span<const double> next, std::span<double> out)>;

/// Backward dynamic programming on [k0, k1]: S_{k1} = psi_{k1}, S_k = max(psi_k, E_k S_{k+1}),
/// dK_k = S_k - E_k S_{k+1}. Writes rows k0..k1 of S and rows k0..k1-1 of dK.
void snell_envelope(const AdaptedProcess& psi, const ScenarioExpectation& expect, int k0, int k1,
                    AdaptedProcess& S, AdaptedProcess& dK);

struct SnellResult {
    AdaptedProcess S;
    AdaptedProcess dK;
    AdaptedProcess K;
};
SnellResult snell_envelope(const AdaptedProcess& psi, const ScenarioExpectation& expect);

/// Exact conditional expectation on a tree-backed ensemble.
ScenarioExpectation tree_expectation(const ConditionalExpectation& ce);

/// Constant drivers: f(t) without Y or U dependence, one independent terminal per particle.
ParticleSolution solve_particles_constant(const MultiEnsemble& multi, const DriverSpec& driver,
                                          const TerminalSpec& terminal, const LossSpec& loss,
                                          const ParticleOptions& opt = {}, WarningLog* log = nullptr);

/// Same with explicit driver values F^i (one AdaptedProcess per particle).
ParticleSolution solve_particles_frozen(const MultiEnsemble& multi,
                                        const std::vector<AdaptedProcess>& driver_values,
                                        const TerminalSpec& terminal, const LossSpec& loss,
                                        const ParticleOptions& opt = {});

/// Picard iteration (P, Q) -> (Y, U) with f^i evaluated at (t, P^i, Q^{ii}).
ParticleSolution solve_particles(const MultiEnsemble& multi, const DriverSpec& driver,
                                 const TerminalSpec& terminal, const LossSpec& loss,
                                 const PicardConfig& picard, const ParticleOptions& opt = {});

struct SkorokhodReport {
    double residual = 0.0;    ///< mean over scenarios of sum_k (mean_i l(t_k, Y^i_k))^+ dK_k
    double residual_se = 0.0;
    double min_margin = 0.0;  ///< min over nodes of mean_i l(t_k, Y^i_k)
};

SkorokhodReport discrete_skorokhod_residual(const ParticleSolution& sol, const LossSpec& loss,
                                            const MultiEnsemble& multi);

/// max over (i, k, s) of |Y^i_{k+1} - Y^i_k + F^i_k dt - sum_j U^{ij}_k dmu^j - R^i_k + dK_k|.
double particle_reconstruction_residual(const ParticleSolution& sol, const MultiEnsemble& multi);

}  // namespace mrbsdej
