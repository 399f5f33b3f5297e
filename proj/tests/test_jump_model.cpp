#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mrbsdej/jump_model.hpp"
#include "oracles.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

using namespace mrbsdej;

TEST_CASE("one mark, two steps: Bernoulli product weights") {
    const JumpModel model({1.0}, {1.0}, 0.2, 2);
    const PathEnsemble ens = build_exact_tree(model);
    REQUIRE(ens.size() == 4);
    const double expected[] = {0.81, 0.09, 0.09, 0.01};
    for (std::size_t s = 0; s < 4; ++s) CHECK(ens.weight(s) == doctest::Approx(expected[s]).epsilon(1e-14));
}

TEST_CASE("no marks gives a single scenario") {
    const JumpModel model({}, {}, 1.0, 5);
    const PathEnsemble ens = build_exact_tree(model);
    REQUIRE(ens.size() == 1);
    CHECK(ens.weight(0) == 1.0);
}

TEST_CASE("two marks, three steps: 27 scenarios summing to one") {
    const JumpModel model({1.0, 2.0}, {1.0, 2.0}, 0.3, 3);
    const PathEnsemble ens = build_exact_tree(model);
    REQUIRE(ens.size() == 27);
    double total = 0.0;
    for (double w : ens.weights()) {
        CHECK(w >= 0.0);
        total += w;
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
    // weights agree with the brute-force enumeration path by path
    const oracle::Tree tree(1, {1.0, 2.0}, 0.3, 3);
    for (std::size_t s = 0; s < ens.size(); ++s)
        CHECK(std::abs(ens.weight(s) - tree.weight[oracle::path_of_single(tree, ens, s)]) < 1e-15);
}

TEST_CASE("model validation") {
    CHECK_THROWS_AS(JumpModel({1.0}, {-1.0}, 1.0, 4), std::invalid_argument);
    CHECK_THROWS_AS(JumpModel({1.0}, {5.0}, 1.0, 4), std::invalid_argument);  // nu dt >= 1
    CHECK_THROWS_AS(JumpModel({1.0, 1.0}, {0.5, 0.5}, 1.0, 4), std::invalid_argument);
    CHECK_THROWS_AS(JumpModel({1.0}, {1.0}, 1.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(build_exact_tree(JumpModel({1.0}, {1.0}, 1.0, 30)), EnumerationCapExceeded);
}

TEST_CASE("compensated increments") {
    const JumpModel model({1.0}, {1.0}, 1.0, 10);
    CHECK(model.compensated_increment(1, 0) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(model.compensated_increment(kNoJump, 0) == doctest::Approx(-0.1).epsilon(1e-15));
    const auto p = model.outcome_probabilities();
    const double e = p[0] * model.compensated_increment(0, 0) + p[1] * model.compensated_increment(1, 0);
    CHECK(std::abs(e) < 1e-14);
}

TEST_CASE("compensated increments average to zero at every exact-tree node") {
    const JumpModel model({1.0, -0.5}, {0.8, 1.7}, 1.0, 4);
    const PathEnsemble ens = build_exact_tree(model);
    const oracle::Tree tree(1, {0.8, 1.7}, 1.0, 4);
    for (int k = 0; k < model.steps(); ++k)
        for (int j = 0; j < model.mark_count(); ++j) {
            std::vector<double> incr(ens.size());
            for (std::size_t s = 0; s < ens.size(); ++s)
                incr[oracle::path_of_single(tree, ens, s)] = model.compensated_increment(ens.outcome(s, k), j);
            for (double v : tree.cond(k, incr)) CHECK(std::abs(v) < 1e-12);
        }
}

TEST_CASE("sampling is deterministic in the seed") {
    const JumpModel model({1.0, 2.0}, {1.0, 0.5}, 1.0, 12);
    const PathEnsemble a = sample_paths(model, 500, 7), b = sample_paths(model, 500, 7);
    const PathEnsemble c = sample_paths(model, 500, 8);
    bool same = true, differs = false;
    for (std::size_t s = 0; s < 500; ++s)
        for (int k = 0; k < 12; ++k) {
            same &= a.outcome(s, k) == b.outcome(s, k);
            differs |= a.outcome(s, k) != c.outcome(s, k);
        }
    CHECK(same);
    CHECK(differs);
}

TEST_CASE("a single sampled path has weight one") {
    const PathEnsemble ens = sample_paths(JumpModel({1.0}, {1.0}, 1.0, 10), 1, 3);
    REQUIRE(ens.size() == 1);
    CHECK(ens.weight(0) == 1.0);
}

TEST_CASE("per-step jump frequency within the binomial interval") {
    const JumpModel model({1.0}, {1.0}, 1.0, 10);
    const std::size_t M = 100000;
    const PathEnsemble ens = sample_paths(model, M, 2024);
    const double p = 0.1;
    for (int k = 0; k < 10; ++k) {
        double hits = 0;
        for (std::size_t s = 0; s < M; ++s) hits += ens.outcome(s, k) == 1;
        CHECK(std::abs(hits / M - p) <= 3.0 * std::sqrt(p * (1 - p) / M));
    }
}

TEST_CASE("seed-averaged frequency stays within 4 sqrt(p/M)") {
    const JumpModel model({1.0, 2.0}, {1.5, 0.5}, 1.0, 8);
    const std::size_t M = 20000;
    for (int j = 0; j < 2; ++j) {
        const double p = model.jump_probability(j);
        double avg_dev = 0.0;
        const int seeds = 5;
        for (int seed = 0; seed < seeds; ++seed) {
            const PathEnsemble ens = sample_paths(model, M, 100 + seed);
            double hits = 0;
            for (std::size_t s = 0; s < M; ++s) hits += ens.outcome(s, 3) == j + 1;
            avg_dev += std::abs(hits / M - p) / seeds;
        }
        CHECK(avg_dev <= 4.0 * std::sqrt(p / M));
    }
}

TEST_CASE("joint tree factorizes over particles") {
    const JumpModel model({1.0, 3.0}, {1.0, 2.0}, 0.5, 2);
    const MultiEnsemble multi = build_joint_tree(model, 2);
    REQUIRE(multi.size() == 81);
    const auto probs = model.outcome_probabilities();
    for (int k = 0; k < 2; ++k)
        for (int a = 0; a <= 2; ++a)
            for (int b = 0; b <= 2; ++b) {
                double joint = 0.0;
                for (std::size_t s = 0; s < multi.size(); ++s)
                    if (multi.particle(0).outcome(s, k) == a && multi.particle(1).outcome(s, k) == b)
                        joint += multi.weights()[s];
                CHECK(std::abs(joint - probs[static_cast<std::size_t>(a)] * probs[static_cast<std::size_t>(b)]) < 1e-15);
            }
    // the whole joint law matches the oracle enumeration
    const oracle::Tree tree(2, {1.0, 2.0}, 0.5, 2);
    for (std::size_t s = 0; s < multi.size(); ++s)
        CHECK(std::abs(multi.weights()[s] - tree.weight[oracle::path_of(tree, multi, s)]) < 1e-15);
}

TEST_CASE("sampled particle 0 reuses the single-driver stream") {
    const JumpModel model({1.0}, {2.0}, 1.0, 9);
    const PathEnsemble single = sample_paths(model, 300, 99);
    const MultiEnsemble multi = sample_particles(model, 3, 300, 99);
    bool same = true, independent = false;
    for (std::size_t s = 0; s < 300; ++s)
        for (int k = 0; k < 9; ++k) {
            same &= single.outcome(s, k) == multi.particle(0).outcome(s, k);
            independent |= multi.particle(1).outcome(s, k) != multi.particle(2).outcome(s, k);
        }
    CHECK(same);
    CHECK(independent);
}

TEST_CASE("running counts") {
    const JumpModel model({1.0, 2.0}, {1.0, 1.0}, 1.0, 4);
    const PathEnsemble ens = build_exact_tree(model);
    for (std::size_t s = 0; s < ens.size(); ++s)
        for (int k = 0; k <= 4; ++k) {
            int c0 = 0, c1 = 0;
            for (int l = 0; l < k; ++l) {
                c0 += ens.outcome(s, l) == 1;
                c1 += ens.outcome(s, l) == 2;
            }
            CHECK(ens.counts(s, k)[0] == c0);
            CHECK(ens.counts(s, k)[1] == c1);
        }
}

TEST_CASE("permuted views relabel particles") {
    const JumpModel model({1.0}, {1.0}, 1.0, 3);
    const MultiEnsemble multi = sample_particles(model, 3, 50, 5);
    const int perm[] = {2, 0, 1};
    const MultiEnsemble p = multi.permuted(perm);
    for (std::size_t s = 0; s < 50; ++s)
        for (int k = 0; k < 3; ++k)
            for (int i = 0; i < 3; ++i) CHECK(p.particle(i).outcome(s, k) == multi.particle(perm[i]).outcome(s, k));
}

TEST_CASE("debug CSV dump") {
    const PathEnsemble ens = build_exact_tree(JumpModel({1.0}, {1.0}, 0.2, 2));
    std::ostringstream os;
    ens.write_csv(os);
    const std::string csv = os.str();
    CHECK(csv.rfind("scenario_id,step,outcome_label\n", 0) == 0);
    CHECK(csv.find("3,1,mark_1") != std::string::npos);
    CHECK(csv.find("0,0,none") != std::string::npos);
}
