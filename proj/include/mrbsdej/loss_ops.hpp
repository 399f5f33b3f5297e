#pragma once

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mrbsdej {

class BracketNotFound : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class LossFamily { linear, affine_threshold, custom_table, custom };

/// Time-dependent level a(t): affine a0 + a1 t, or a0 + amplitude * sin(2 pi frequency t).
struct Threshold {
    enum class Kind { affine, sine };
    Kind kind = Kind::affine;
    double a0 = 0.0;
    double a1 = 0.0;
    double amplitude = 0.0;
    double frequency = 1.0;

    double operator()(double t) const;
    double lipschitz() const;
    bool operator==(const Threshold&) const = default;
};

/// Running loss l(t, y), strictly increasing in y, with declared certificates
///   kappa_lower |y1 - y2| <= |l(t,y1) - l(t,y2)| <= kappa_upper |y1 - y2|,
///   |l(t,y) - l(s,y)| <= time_lipschitz |t - s|,  |l(t,y)| <= growth (1 + |y|).
struct LossSpec {
    LossFamily family = LossFamily::custom;
    std::function<double(double, double)> evaluate;
    double kappa_lower = 1.0;
    double kappa_upper = 1.0;
    double time_lipschitz = 0.0;
    double growth = 1.0;
    /// Set for l(t,y) = scale * (y - a(t)); enables the closed-form reflection a(t) - E[X].
    std::optional<Threshold> linear_threshold;

    double operator()(double t, double y) const { return evaluate(t, y); }
    double kappa() const { return kappa_upper / kappa_lower; }
    double r_bar() const { return time_lipschitz / kappa_lower; }
};

LossSpec make_linear_loss(double scale, Threshold threshold);
/// slope_below for y < a(t), slope_above for y >= a(t).
LossSpec make_affine_threshold_loss(double slope_below, double slope_above, Threshold threshold);

/// Rectangular (t, y) grid of loss values; bilinear inside, linear extrapolation in y,
/// clamped in t.
struct LossTable {
    std::vector<double> times;
    std::vector<double> levels;
    std::vector<double> values;  ///< values[i * levels.size() + j] = l(times[i], levels[j])

    double operator()(double t, double y) const;
};

/// Reads CSV rows "t,y,l" (optional header); throws std::invalid_argument unless the
/// rows form a full rectangular grid.
LossTable load_loss_table(const std::string& path);
LossTable parse_loss_table(const std::string& csv_text);

LossSpec make_table_loss(LossTable table, double kappa_lower, double kappa_upper,
                         double time_lipschitz, double growth);

struct SampleCloud {
    std::vector<double> values;
    std::vector<double> weights;
};

struct BisectionOptions {
    double tol = 1e-10;
    double range = 1e6;
};

/// inf { x : sum_i w_i l(t, x + v_i) >= 0 }; may be negative.
double l_bar_operator(const LossSpec& loss, double t, std::span<const double> values,
                      std::span<const double> weights, const BisectionOptions& opt = {});
double l_bar_operator(const LossSpec& loss, double t, const SampleCloud& cloud,
                      const BisectionOptions& opt = {});

/// max(0, l_bar); exactly 0 when the constraint already holds at x = 0.
double l_operator(const LossSpec& loss, double t, std::span<const double> values,
                  std::span<const double> weights, const BisectionOptions& opt = {});
double l_operator(const LossSpec& loss, double t, const SampleCloud& cloud,
                  const BisectionOptions& opt = {});

/// l_operator on the uniform cloud of N values. The values are summed in sorted order,
/// so the result does not depend on how the particles are labelled.
double empirical_l_operator(const LossSpec& loss, double t, std::span<const double> values,
                            const BisectionOptions& opt = {});

/// sum_i w_i l(t, v_i)
double expected_loss(const LossSpec& loss, double t, std::span<const double> values,
                     std::span<const double> weights);

}  // namespace mrbsdej
