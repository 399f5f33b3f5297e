#include "mrbsdej/loss_ops.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace mrbsdej {

double Threshold::operator()(double t) const {
    if (kind == Kind::affine) return a0 + a1 * t;
    return a0 + amplitude * std::sin(2.0 * std::numbers::pi * frequency * t);
}

double Threshold::lipschitz() const {
    if (kind == Kind::affine) return std::abs(a1);
    return std::abs(amplitude) * 2.0 * std::numbers::pi * std::abs(frequency);
}

LossSpec make_linear_loss(double scale, Threshold threshold) {
    if (!(scale > 0.0)) throw std::invalid_argument("linear loss: scale must be positive");
    LossSpec spec;
    spec.family = LossFamily::linear;
    spec.evaluate = [scale, threshold](double t, double y) { return scale * (y - threshold(t)); };
    spec.kappa_lower = scale;
    spec.kappa_upper = scale;
    spec.time_lipschitz = scale * threshold.lipschitz();
    double a_max = std::abs(threshold.a0) + std::abs(threshold.amplitude);
    if (threshold.kind == Threshold::Kind::affine) a_max += std::abs(threshold.a1);
    spec.growth = scale * std::max(1.0, a_max);
    spec.linear_threshold = threshold;
    return spec;
}

LossSpec make_affine_threshold_loss(double slope_below, double slope_above, Threshold threshold) {
    if (!(slope_below > 0.0) || !(slope_above > 0.0))
        throw std::invalid_argument("affine-threshold loss: slopes must be positive");
    LossSpec spec;
    spec.family = LossFamily::affine_threshold;
    spec.evaluate = [=](double t, double y) {
        const double d = y - threshold(t);
        return d >= 0.0 ? slope_above * d : slope_below * d;
    };
    spec.kappa_lower = std::min(slope_below, slope_above);
    spec.kappa_upper = std::max(slope_below, slope_above);
    spec.time_lipschitz = spec.kappa_upper * threshold.lipschitz();
    double a_max = std::abs(threshold.a0) + std::abs(threshold.amplitude);
    if (threshold.kind == Threshold::Kind::affine) a_max += std::abs(threshold.a1);
    spec.growth = spec.kappa_upper * std::max(1.0, a_max);
    return spec;
}

double LossTable::operator()(double t, double y) const {
    const std::size_t nt = times.size(), ny = levels.size();
    auto row_value = [&](std::size_t i) {
        const double* row = values.data() + i * ny;
        if (ny == 1) return row[0];
        std::size_t j = static_cast<std::size_t>(
            std::upper_bound(levels.begin(), levels.end(), y) - levels.begin());
        j = std::clamp<std::size_t>(j, 1, ny - 1);
        const double y0 = levels[j - 1], y1 = levels[j];
        return row[j - 1] + (row[j] - row[j - 1]) * (y - y0) / (y1 - y0);
    };
    if (nt == 1 || t <= times.front()) return row_value(0);
    if (t >= times.back()) return row_value(nt - 1);
    const auto i = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
    const double w = (t - times[i - 1]) / (times[i] - times[i - 1]);
    return (1.0 - w) * row_value(i - 1) + w * row_value(i);
}

LossTable parse_loss_table(const std::string& csv_text) {
    std::map<double, std::map<double, double>> grid;
    std::istringstream in(csv_text);
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream fields(line);
        double t, y, l;
        if (!(fields >> t >> y >> l)) {
            if (rows == 0 && grid.empty()) continue;  // header
            throw std::invalid_argument("loss table: malformed row '" + line + "'");
        }
        if (!grid[t].emplace(y, l).second)
            throw std::invalid_argument("loss table: duplicate grid point");
        ++rows;
    }
    if (grid.empty()) throw std::invalid_argument("loss table: no rows");
    LossTable table;
    for (const auto& [t, row] : grid) {
        table.times.push_back(t);
        if (table.levels.empty())
            for (const auto& [y, l] : row) table.levels.push_back(y);
        if (row.size() != table.levels.size())
            throw std::invalid_argument("loss table: grid is not rectangular");
        std::size_t j = 0;
        for (const auto& [y, l] : row) {
            if (y != table.levels[j++]) throw std::invalid_argument("loss table: grid is not rectangular");
            table.values.push_back(l);
        }
    }
    if (table.levels.size() < 2) throw std::invalid_argument("loss table: need at least two y levels");
    return table;
}

LossTable load_loss_table(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw std::invalid_argument("loss table: cannot open " + path);
    std::stringstream buffer;
    buffer << file.rdbuf();
    return parse_loss_table(buffer.str());
}

LossSpec make_table_loss(LossTable table, double kappa_lower, double kappa_upper,
                         double time_lipschitz, double growth) {
    if (!(kappa_lower > 0.0) || !(kappa_upper >= kappa_lower))
        throw std::invalid_argument("table loss: need kappa_upper >= kappa_lower > 0");
    LossSpec spec;
    spec.family = LossFamily::custom_table;
    spec.evaluate = [table = std::move(table)](double t, double y) { return table(t, y); };
    spec.kappa_lower = kappa_lower;
    spec.kappa_upper = kappa_upper;
    spec.time_lipschitz = time_lipschitz;
    spec.growth = growth;
    return spec;
}

namespace {

double weighted_sum(std::span<const double> values, std::span<const double> weights) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += weights[i] * values[i];
    return s;
}

/// Root of the increasing map x -> F(x); returns the upper end of the final bracket so
/// that F(result) >= 0 holds up to the evaluation of F itself.
template <class F>
double bisect_root(F&& eval, double kappa_lower, const BisectionOptions& opt) {
    const double f0 = eval(0.0);
    if (f0 == 0.0) return 0.0;
    double lo, hi;
    const double guess = std::abs(f0) / kappa_lower;
    double step = std::max(guess * (1.0 + 1e-9) + opt.tol, opt.tol);
    if (f0 > 0.0) {
        hi = 0.0;
        for (;;) {
            lo = -step;
            if (eval(lo) < 0.0) break;
            hi = lo;
            if (step > opt.range)
                throw BracketNotFound("loss constraint holds on the whole search range");
            step *= 2.0;
        }
    } else {
        lo = 0.0;
        for (;;) {
            hi = step;
            if (eval(hi) >= 0.0) break;
            lo = hi;
            if (step > opt.range)
                throw BracketNotFound(
                    "expected loss stays negative on the whole search range; E[l(t, +inf)] > 0 may fail");
            step *= 2.0;
        }
    }
    while (hi - lo > opt.tol) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (eval(mid) >= 0.0)
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

void check_cloud(std::span<const double> values, std::span<const double> weights) {
    if (values.empty()) throw std::invalid_argument("reflection operator: empty cloud");
    if (values.size() != weights.size())
        throw std::invalid_argument("reflection operator: values and weights differ in length");
}

}  // namespace

double expected_loss(const LossSpec& loss, double t, std::span<const double> values,
                     std::span<const double> weights) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += weights[i] * loss(t, values[i]);
    return s;
}

double l_bar_operator(const LossSpec& loss, double t, std::span<const double> values,
                      std::span<const double> weights, const BisectionOptions& opt) {
    check_cloud(values, weights);
    if (loss.linear_threshold) return (*loss.linear_threshold)(t) - weighted_sum(values, weights);
    return bisect_root(
        [&](double x) {
            double s = 0.0;
            for (std::size_t i = 0; i < values.size(); ++i) s += weights[i] * loss(t, x + values[i]);
            return s;
        },
        loss.kappa_lower, opt);
}

double l_bar_operator(const LossSpec& loss, double t, const SampleCloud& cloud,
                      const BisectionOptions& opt) {
    return l_bar_operator(loss, t, cloud.values, cloud.weights, opt);
}

double l_operator(const LossSpec& loss, double t, std::span<const double> values,
                  std::span<const double> weights, const BisectionOptions& opt) {
    check_cloud(values, weights);
    if (loss.linear_threshold) {
        const double x = (*loss.linear_threshold)(t) - weighted_sum(values, weights);
        return x > 0.0 ? x : 0.0;
    }
    if (expected_loss(loss, t, values, weights) >= 0.0) return 0.0;
    return std::max(0.0, l_bar_operator(loss, t, values, weights, opt));
}

double l_operator(const LossSpec& loss, double t, const SampleCloud& cloud,
                  const BisectionOptions& opt) {
    return l_operator(loss, t, cloud.values, cloud.weights, opt);
}

double empirical_l_operator(const LossSpec& loss, double t, std::span<const double> values,
                            const BisectionOptions& opt) {
    if (values.empty()) throw std::invalid_argument("empirical reflection: no particles");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double inv_n = 1.0 / static_cast<double>(sorted.size());
    if (loss.linear_threshold) {
        double mean = 0.0;
        for (double v : sorted) mean += v;
        const double x = (*loss.linear_threshold)(t) - mean * inv_n;
        return x > 0.0 ? x : 0.0;
    }
    auto eval = [&](double x) {
        double s = 0.0;
        for (double v : sorted) s += loss(t, x + v);
        return s * inv_n;
    };
    if (eval(0.0) >= 0.0) return 0.0;
    return std::max(0.0, bisect_root(eval, loss.kappa_lower, opt));
}

}  // namespace mrbsdej
