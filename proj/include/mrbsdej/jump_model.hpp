#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace mrbsdej {

/// Outcome of one grid step for one driver: 0 is "no jump", j + 1 is a jump with mark j.
using JumpLabel = std::uint8_t;
inline constexpr JumpLabel kNoJump = 0;

inline constexpr std::size_t kDefaultEnumerationCap = std::size_t{1} << 20;

class EnumerationCapExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Finite-mark Poisson driver on a uniform grid.
///
/// Each grid step carries at most one jump; mark j fires with probability
/// nu_j * dt and nothing happens with probability 1 - sum_j nu_j * dt.
/// Intensities are constant in time.
class JumpModel {
public:
    JumpModel(std::vector<double> marks, std::vector<double> intensities, double horizon,
              int steps);

    int mark_count() const noexcept { return static_cast<int>(marks_.size()); }
    int steps() const noexcept { return steps_; }
    double horizon() const noexcept { return horizon_; }
    double dt() const noexcept { return horizon_ / steps_; }
    double time(int k) const noexcept { return k == steps_ ? horizon_ : k * dt(); }

    std::span<const double> marks() const noexcept { return marks_; }
    std::span<const double> intensities() const noexcept { return intensities_; }

    /// (p_none, p_1, ..., p_m), indexed by JumpLabel.
    std::span<const double> outcome_probabilities() const noexcept { return outcome_probs_; }
    double jump_probability(int mark) const { return outcome_probs_.at(mark + 1); }
    double no_jump_probability() const noexcept { return outcome_probs_[0]; }

    /// 1{outcome = mark} - nu_mark * dt
    double compensated_increment(JumpLabel outcome, int mark) const;

    bool operator==(const JumpModel&) const = default;

private:
    std::vector<double> marks_;
    std::vector<double> intensities_;
    double horizon_;
    int steps_;
    std::vector<double> outcome_probs_;
};

enum class EnsembleKind { exact_tree, monte_carlo };

/// Branching structure of an enumerated scenario tree.
///
/// Scenario indices are base-`branching` numbers whose most significant digit
/// is the joint outcome of step 0, so every history node at time t_k is a
/// contiguous block of branching^(steps - k) scenarios. Within one digit the
/// joint outcome encodes `coordinates` independent drivers, coordinate 0 most
/// significant, each in base (marks + 1).
struct TreeLayout {
    std::size_t branching = 1;
    int coordinates = 1;
    int marks = 0;
    int steps = 0;
    std::vector<double> branch_probabilities;

    std::size_t block_size(int k) const;
    JumpLabel label(std::size_t branch, int coordinate) const;
};

/// Weighted set of discrete scenarios over the grid of a JumpModel.
///
/// On a joint particle tree each particle gets its own PathEnsemble view that
/// shares the joint layout and weights; `coordinate()` names which digit of
/// the joint outcome belongs to it.
class PathEnsemble {
public:
    PathEnsemble(const JumpModel& model, EnsembleKind kind, std::vector<JumpLabel> outcomes,
                 std::vector<double> weights, std::uint64_t seed,
                 std::optional<TreeLayout> tree = std::nullopt, int coordinate = 0);

    const JumpModel& model() const noexcept { return model_; }
    EnsembleKind kind() const noexcept { return kind_; }
    int steps() const noexcept { return model_.steps(); }
    int marks() const noexcept { return model_.mark_count(); }
    std::size_t size() const noexcept { return weights_.size(); }
    std::uint64_t seed() const noexcept { return seed_; }

    JumpLabel outcome(std::size_t scenario, int step) const {
        return outcomes_[scenario * steps() + step];
    }
    std::span<const JumpLabel> path(std::size_t scenario) const {
        return {outcomes_.data() + scenario * steps(), static_cast<std::size_t>(steps())};
    }
    std::span<const double> weights() const noexcept { return weights_; }
    double weight(std::size_t scenario) const { return weights_[scenario]; }

    /// Jump counts per mark over steps [0, k).
    std::span<const std::uint16_t> counts(std::size_t scenario, int k) const {
        const auto m = static_cast<std::size_t>(marks());
        return {counts_.data() + (scenario * (steps() + 1) + k) * m, m};
    }

    const TreeLayout* tree() const noexcept { return tree_ ? &*tree_ : nullptr; }
    int coordinate() const noexcept { return coordinate_; }

    /// Debug dump: scenario_id,step,outcome_label
    void write_csv(std::ostream& out) const;

private:
    JumpModel model_;
    EnsembleKind kind_;
    std::vector<JumpLabel> outcomes_;
    std::vector<double> weights_;
    std::uint64_t seed_;
    std::optional<TreeLayout> tree_;
    int coordinate_;
    std::vector<std::uint16_t> counts_;
};

/// All (m+1)^n joint outcomes in lexicographic order of step outcomes.
/// Throws EnumerationCapExceeded when (m+1)^n > cap.
PathEnsemble build_exact_tree(const JumpModel& model, std::size_t cap = kDefaultEnumerationCap);

/// M independent paths, weight 1/M each. Draws depend only on (seed, scenario, step).
PathEnsemble sample_paths(const JumpModel& model, std::size_t scenarios, std::uint64_t seed);

/// N independent copies of the jump driver under one joint scenario index.
class MultiEnsemble {
public:
    MultiEnsemble(EnsembleKind kind, std::vector<PathEnsemble> particles,
                  std::optional<TreeLayout> joint_tree);

    EnsembleKind kind() const noexcept { return kind_; }
    int particles() const noexcept { return static_cast<int>(particles_.size()); }
    std::size_t size() const noexcept { return particles_.front().size(); }
    int steps() const noexcept { return particles_.front().steps(); }
    int marks() const noexcept { return particles_.front().marks(); }
    const JumpModel& model() const noexcept { return particles_.front().model(); }
    const PathEnsemble& particle(int i) const { return particles_.at(static_cast<std::size_t>(i)); }
    std::span<const double> weights() const noexcept { return particles_.front().weights(); }
    const TreeLayout* joint_tree() const noexcept { return joint_tree_ ? &*joint_tree_ : nullptr; }

    /// Relabels particles: particle i of the result is particle perm[i] of this ensemble.
    MultiEnsemble permuted(std::span<const int> perm) const;

private:
    EnsembleKind kind_;
    std::vector<PathEnsemble> particles_;
    std::optional<TreeLayout> joint_tree_;
};

/// Product tree over particles and steps, (m+1)^(N n) scenarios.
MultiEnsemble build_joint_tree(const JumpModel& model, int particles,
                               std::size_t cap = kDefaultEnumerationCap);

/// M joint scenarios; particle i of scenario s uses the counter stream (seed, i, s, k).
MultiEnsemble sample_particles(const JumpModel& model, int particles, std::size_t scenarios,
                               std::uint64_t seed);

}  // namespace mrbsdej
