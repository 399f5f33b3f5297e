#pragma once

#include "mrbsdej/diagnostics.hpp"
#include "mrbsdej/jump_model.hpp"
#include "mrbsdej/loss_ops.hpp"
#include "mrbsdej/regression.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

namespace mrbsdej {

enum class Backend { exact, regression };

/// Values on the grid t_0..t_n for every scenario, stored step-major (k * M + s).
/// The value at step k may only depend on the outcomes of steps 0..k-1.
struct AdaptedProcess {
    int steps = 0;
    std::size_t scenarios = 0;
    std::vector<double> values;

    AdaptedProcess() = default;
    AdaptedProcess(int n, std::size_t m, double fill = 0.0)
        : steps(n), scenarios(m), values(static_cast<std::size_t>(n + 1) * m, fill) {}

    double& operator()(int k, std::size_t s) { return values[static_cast<std::size_t>(k) * scenarios + s]; }
    double operator()(int k, std::size_t s) const {
        return values[static_cast<std::size_t>(k) * scenarios + s];
    }
    std::span<double> row(int k) { return {values.data() + static_cast<std::size_t>(k) * scenarios, scenarios}; }
    std::span<const double> row(int k) const {
        return {values.data() + static_cast<std::size_t>(k) * scenarios, scenarios};
    }
};

/// Per-mark integrand for the jump at step k, k = 0..n-1, stored as ((k * M + s) * m + j).
/// The value at step k multiplies the compensated increment of step k and is
/// fixed before that outcome is revealed.
struct PredictableField {
    int steps = 0;
    std::size_t scenarios = 0;
    int marks = 0;
    std::vector<double> values;

    PredictableField() = default;
    PredictableField(int n, std::size_t m, int marks_, double fill = 0.0)
        : steps(n), scenarios(m), marks(marks_),
          values(static_cast<std::size_t>(n) * m * static_cast<std::size_t>(marks_), fill) {}

    double& operator()(int k, std::size_t s, int j) { return values[index(k, s) + static_cast<std::size_t>(j)]; }
    double operator()(int k, std::size_t s, int j) const {
        return values[index(k, s) + static_cast<std::size_t>(j)];
    }
    std::span<double> at(int k, std::size_t s) { return {values.data() + index(k, s), static_cast<std::size_t>(marks)}; }
    std::span<const double> at(int k, std::size_t s) const {
        return {values.data() + index(k, s), static_cast<std::size_t>(marks)};
    }
    std::span<double> step(int k) {
        return {values.data() + index(k, 0), scenarios * static_cast<std::size_t>(marks)};
    }

private:
    std::size_t index(int k, std::size_t s) const {
        return (static_cast<std::size_t>(k) * scenarios + s) * static_cast<std::size_t>(marks);
    }
};

/// Driver f(t, y, u) with Lipschitz constant lambda in (y, u) for
/// |y| + (sum_j nu_j u_j^2)^(1/2), and |f(t, 0, 0)| <= bound_L.
struct DriverSpec {
    std::function<double(double, double, std::span<const double>)> evaluate;
    double lipschitz_lambda = 0.0;
    double bound_L = 0.0;
    bool depends_on_y = false;
    bool depends_on_u = false;

    double operator()(double t, double y, std::span<const double> u) const { return evaluate(t, y, u); }
};

/// Terminal value as a function of the terminal jump counts per mark; |xi| <= bound_M.
struct TerminalSpec {
    std::function<double(std::span<const std::uint16_t>)> evaluate;
    double bound_M = 0.0;

    std::vector<double> values(const PathEnsemble& ensemble) const;
};

/// E[ . | F_k] and the martingale-representation integrand on one ensemble.
///
/// Exact backend: averages over the children of each history node with the tree's
/// branch probabilities. Regression backend: weighted least squares on polynomials of
/// the running jump counts at step k, one projector per step.
class ConditionalExpectation {
public:
    ConditionalExpectation(const PathEnsemble& ensemble, Backend backend,
                           const RegressionOptions& opt = {}, WarningLog* log = nullptr);
    ~ConditionalExpectation();
    ConditionalExpectation(ConditionalExpectation&&) noexcept;

    const PathEnsemble& ensemble() const noexcept { return *ensemble_; }
    Backend backend() const noexcept { return backend_; }

    /// out[s] = E[next | F_k](s); `next` holds step-(k+1) values per scenario.
    void expect(int k, std::span<const double> next, std::span<double> out) const;
    std::vector<double> expect(int k, std::span<const double> next) const;

    /// Integrand u_k with next - E_k[next] ~ sum_j u_k(j) * compensated increment j,
    /// written as out[s * m + j]. `coordinate` selects which driver of a joint tree
    /// the increments belong to (default: the ensemble's own).
    void extract_u(int k, std::span<const double> next, std::span<double> out, int coordinate = -1) const;

    /// Law of a step-k value: one atom per history node on exact trees, the raw
    /// sample otherwise.
    SampleCloud cloud(int k, std::span<const double> values_k) const;

private:
    const PathEnsemble* ensemble_;
    Backend backend_;
    std::vector<std::unique_ptr<LeastSquaresProjector>> projectors_;
    std::vector<std::vector<double>> node_weights_;
};

struct SolverOptions {
    int implicit_max_iters = 100;
    double implicit_tol = 1e-13;
};

/// Inputs of one backward sweep y_k = E_k[y_{k+1}] + f_k dt + dK_k.
struct BackwardInputs {
    const DriverSpec* driver = nullptr;
    /// When set, f is evaluated at (t_k, P_k, u_k) instead of (t_k, y_k, u_k).
    const AdaptedProcess* frozen_y = nullptr;
    /// When set, these driver values are used as they are (driver is ignored).
    const AdaptedProcess* driver_values = nullptr;
    /// Optional deterministic increments dK_k, k = 0..n-1.
    std::span<const double> k_increments;
};

/// Backward induction over steps [k0, k1). Row k1 of `y` must hold the terminal
/// values; rows k0..k1-1 of `y`, `u` and (if given) `f_used` are written.
/// Throws NonConvergence when the implicit step in y fails to settle.
void backward_solve(const ConditionalExpectation& ce, const BackwardInputs& in, int k0, int k1,
                    AdaptedProcess& y, PredictableField& u, AdaptedProcess* f_used = nullptr,
                    const SolverOptions& opt = {});

struct BsdejSolution {
    AdaptedProcess y;
    PredictableField u;
    AdaptedProcess f;  ///< driver value used at each step (row n unused)
};

BsdejSolution solve_bsdej(const ConditionalExpectation& ce, const DriverSpec& driver,
                          std::span<const double> terminal_values,
                          const AdaptedProcess* frozen_y = nullptr, const SolverOptions& opt = {});

/// max over (k, s) of |y_{k+1} - y_k + f_k dt - sum_j u_k(j) dmu_j + dK_k|.
double reconstruction_residual(const PathEnsemble& ensemble, const AdaptedProcess& y,
                               const PredictableField& u, const AdaptedProcess& f,
                               std::span<const double> k_increments = {}, int k0 = 0, int k1 = -1);

/// max over (k, s) of |E_k[y_{k+1}] - y_k + f_k dt + dK_k| (exact trees).
double martingale_residual(const ConditionalExpectation& ce, const AdaptedProcess& y,
                           const AdaptedProcess& f, std::span<const double> k_increments = {});

/// Largest spread of a step-k value inside one history node (0 when adapted).
double adaptedness_violation(const PathEnsemble& ensemble, const AdaptedProcess& process);
double predictability_violation(const PathEnsemble& ensemble, const PredictableField& field);

/// CSV dump: scenario,step,y,u_1..u_m
void write_solution_csv(std::ostream& out, const AdaptedProcess& y, const PredictableField& u);

}  // namespace mrbsdej
