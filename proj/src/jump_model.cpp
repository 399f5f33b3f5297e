#include "mrbsdej/jump_model.hpp"

#include "mrbsdej/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <set>
#include <string>

namespace mrbsdej {

JumpModel::JumpModel(std::vector<double> marks, std::vector<double> intensities, double horizon,
                     int steps)
    : marks_(std::move(marks)), intensities_(std::move(intensities)), horizon_(horizon),
      steps_(steps) {
    if (marks_.size() != intensities_.size())
        throw std::invalid_argument("jump model: marks and intensities differ in length");
    if (marks_.size() > 254) throw std::invalid_argument("jump model: at most 254 marks");
    if (!(horizon_ > 0.0)) throw std::invalid_argument("jump model: horizon must be positive");
    if (steps_ < 1) throw std::invalid_argument("jump model: steps must be >= 1");
    if (std::set<double>(marks_.begin(), marks_.end()).size() != marks_.size())
        throw std::invalid_argument("jump model: marks must be distinct");
    const double h = dt();
    double total = 0.0;
    outcome_probs_.assign(marks_.size() + 1, 0.0);
    for (std::size_t j = 0; j < intensities_.size(); ++j) {
        if (!(intensities_[j] >= 0.0) || !std::isfinite(intensities_[j]))
            throw std::invalid_argument("jump model: intensities must be finite and >= 0");
        outcome_probs_[j + 1] = intensities_[j] * h;
        total += outcome_probs_[j + 1];
    }
    if (!(total < 1.0))
        throw std::invalid_argument("jump model: sum of nu_j * dt must stay below 1 (refine the grid)");
    outcome_probs_[0] = 1.0 - total;
}

double JumpModel::compensated_increment(JumpLabel outcome, int mark) const {
    if (mark < 0 || mark >= mark_count())
        throw std::out_of_range("compensated_increment: mark index out of range");
    return (outcome == mark + 1 ? 1.0 : 0.0) - outcome_probs_[static_cast<std::size_t>(mark) + 1];
}

std::size_t TreeLayout::block_size(int k) const {
    std::size_t b = 1;
    for (int i = k; i < steps; ++i) b *= branching;
    return b;
}

JumpLabel TreeLayout::label(std::size_t branch, int coordinate) const {
    const auto base = static_cast<std::size_t>(marks) + 1;
    for (int c = coordinates - 1; c > coordinate; --c) branch /= base;
    return static_cast<JumpLabel>(branch % base);
}

PathEnsemble::PathEnsemble(const JumpModel& model, EnsembleKind kind,
                           std::vector<JumpLabel> outcomes, std::vector<double> weights,
                           std::uint64_t seed, std::optional<TreeLayout> tree, int coordinate)
    : model_(model), kind_(kind), outcomes_(std::move(outcomes)), weights_(std::move(weights)),
      seed_(seed), tree_(std::move(tree)), coordinate_(coordinate) {
    const auto n = static_cast<std::size_t>(model_.steps());
    const auto m = static_cast<std::size_t>(model_.mark_count());
    if (weights_.empty()) throw std::invalid_argument("path ensemble: no scenarios");
    if (outcomes_.size() != weights_.size() * n)
        throw std::invalid_argument("path ensemble: outcome array has wrong size");
    counts_.assign(weights_.size() * (n + 1) * m, 0);
    if (m == 0) return;
    for (std::size_t s = 0; s < weights_.size(); ++s) {
        std::uint16_t* c = counts_.data() + s * (n + 1) * m;
        for (std::size_t k = 0; k < n; ++k) {
            std::copy(c + k * m, c + (k + 1) * m, c + (k + 1) * m);
            const JumpLabel o = outcomes_[s * n + k];
            if (o != kNoJump) ++c[(k + 1) * m + o - 1];
        }
    }
}

void PathEnsemble::write_csv(std::ostream& out) const {
    out << "scenario_id,step,outcome_label\n";
    for (std::size_t s = 0; s < size(); ++s)
        for (int k = 0; k < steps(); ++k) {
            const JumpLabel o = outcome(s, k);
            out << s << ',' << k << ',' << (o == kNoJump ? std::string("none") : "mark_" + std::to_string(o))
                << '\n';
        }
}

namespace {

std::size_t checked_power(std::size_t base, std::size_t exponent, std::size_t cap) {
    std::size_t r = 1;
    for (std::size_t i = 0; i < exponent; ++i) {
        if (r > cap / base)
            throw EnumerationCapExceeded("exact tree would enumerate more than " + std::to_string(cap) +
                                         " scenarios; use the Monte Carlo backend");
        r *= base;
    }
    return r;
}

JumpLabel draw_label(std::span<const double> probs, double u) {
    // Cumulative search from the last mark down keeps "no jump" as the bulk case.
    double acc = 0.0;
    for (std::size_t j = probs.size() - 1; j >= 1; --j) {
        acc += probs[j];
        if (u < acc) return static_cast<JumpLabel>(j);
    }
    return kNoJump;
}

}  // namespace

PathEnsemble build_exact_tree(const JumpModel& model, std::size_t cap) {
    const auto n = static_cast<std::size_t>(model.steps());
    const auto base = static_cast<std::size_t>(model.mark_count()) + 1;
    const std::size_t total = checked_power(base, n, cap);
    const auto probs = model.outcome_probabilities();
    std::vector<JumpLabel> outcomes(total * n);
    std::vector<double> weights(total);
    for (std::size_t s = 0; s < total; ++s) {
        std::size_t rest = s;
        double w = 1.0;
        for (std::size_t k = n; k-- > 0;) {
            const auto o = static_cast<JumpLabel>(rest % base);
            rest /= base;
            outcomes[s * n + k] = o;
            w *= probs[o];
        }
        weights[s] = w;
    }
    TreeLayout layout{base, 1, model.mark_count(), model.steps(),
                      std::vector<double>(probs.begin(), probs.end())};
    return PathEnsemble(model, EnsembleKind::exact_tree, std::move(outcomes), std::move(weights), 0,
                        std::move(layout), 0);
}

PathEnsemble sample_paths(const JumpModel& model, std::size_t scenarios, std::uint64_t seed) {
    if (scenarios < 1) throw std::invalid_argument("sample_paths: need at least one scenario");
    const auto n = static_cast<std::size_t>(model.steps());
    const auto probs = model.outcome_probabilities();
    std::vector<JumpLabel> outcomes(scenarios * n, kNoJump);
    if (model.mark_count() > 0)
        for (std::size_t s = 0; s < scenarios; ++s)
            for (std::size_t k = 0; k < n; ++k)
                outcomes[s * n + k] = draw_label(probs, counter_uniform(seed, 0, s, k));
    return PathEnsemble(model, EnsembleKind::monte_carlo, std::move(outcomes),
                        std::vector<double>(scenarios, 1.0 / static_cast<double>(scenarios)), seed);
}

MultiEnsemble::MultiEnsemble(EnsembleKind kind, std::vector<PathEnsemble> particles,
                             std::optional<TreeLayout> joint_tree)
    : kind_(kind), particles_(std::move(particles)), joint_tree_(std::move(joint_tree)) {
    if (particles_.empty()) throw std::invalid_argument("multi ensemble: need at least one particle");
    for (const auto& p : particles_)
        if (p.size() != particles_.front().size() || p.steps() != particles_.front().steps())
            throw std::invalid_argument("multi ensemble: particle ensembles are not aligned");
}

MultiEnsemble MultiEnsemble::permuted(std::span<const int> perm) const {
    if (perm.size() != particles_.size())
        throw std::invalid_argument("permuted: permutation has wrong length");
    std::vector<int> check(perm.begin(), perm.end());
    std::sort(check.begin(), check.end());
    for (std::size_t i = 0; i < check.size(); ++i)
        if (check[i] != static_cast<int>(i)) throw std::invalid_argument("permuted: not a permutation");
    std::vector<PathEnsemble> out;
    out.reserve(perm.size());
    for (int p : perm) out.push_back(particles_[static_cast<std::size_t>(p)]);
    return MultiEnsemble(kind_, std::move(out), joint_tree_);
}

MultiEnsemble build_joint_tree(const JumpModel& model, int particles, std::size_t cap) {
    if (particles < 1) throw std::invalid_argument("build_joint_tree: need at least one particle");
    const auto n = static_cast<std::size_t>(model.steps());
    const auto base = static_cast<std::size_t>(model.mark_count()) + 1;
    const auto np = static_cast<std::size_t>(particles);
    const std::size_t total = checked_power(base, n * np, cap);
    const std::size_t branching = checked_power(base, np, cap);
    const auto probs = model.outcome_probabilities();

    TreeLayout layout{branching, particles, model.mark_count(), model.steps(), {}};
    layout.branch_probabilities.resize(branching);
    for (std::size_t b = 0; b < branching; ++b) {
        double w = 1.0;
        for (int i = 0; i < particles; ++i) w *= probs[layout.label(b, i)];
        layout.branch_probabilities[b] = w;
    }

    std::vector<std::vector<JumpLabel>> outcomes(np, std::vector<JumpLabel>(total * n));
    std::vector<double> weights(total);
    for (std::size_t s = 0; s < total; ++s) {
        std::size_t rest = s;
        double w = 1.0;
        for (std::size_t k = n; k-- > 0;) {
            const std::size_t b = rest % branching;
            rest /= branching;
            w *= layout.branch_probabilities[b];
            for (std::size_t i = 0; i < np; ++i)
                outcomes[i][s * n + k] = layout.label(b, static_cast<int>(i));
        }
        weights[s] = w;
    }
    std::vector<PathEnsemble> views;
    views.reserve(np);
    for (std::size_t i = 0; i < np; ++i)
        views.emplace_back(model, EnsembleKind::exact_tree, std::move(outcomes[i]), weights, 0, layout,
                           static_cast<int>(i));
    return MultiEnsemble(EnsembleKind::exact_tree, std::move(views), std::move(layout));
}

MultiEnsemble sample_particles(const JumpModel& model, int particles, std::size_t scenarios,
                               std::uint64_t seed) {
    if (particles < 1) throw std::invalid_argument("sample_particles: need at least one particle");
    if (scenarios < 1) throw std::invalid_argument("sample_particles: need at least one scenario");
    const auto n = static_cast<std::size_t>(model.steps());
    const auto probs = model.outcome_probabilities();
    std::vector<PathEnsemble> views;
    views.reserve(static_cast<std::size_t>(particles));
    for (int i = 0; i < particles; ++i) {
        std::vector<JumpLabel> outcomes(scenarios * n, kNoJump);
        if (model.mark_count() > 0)
            for (std::size_t s = 0; s < scenarios; ++s)
                for (std::size_t k = 0; k < n; ++k)
                    outcomes[s * n + k] =
                        draw_label(probs, counter_uniform(seed, static_cast<std::uint64_t>(i), s, k));
        views.emplace_back(model, EnsembleKind::monte_carlo, std::move(outcomes),
                           std::vector<double>(scenarios, 1.0 / static_cast<double>(scenarios)), seed,
                           std::nullopt, i);
    }
    return MultiEnsemble(EnsembleKind::monte_carlo, std::move(views), std::nullopt);
}

}  // namespace mrbsdej
