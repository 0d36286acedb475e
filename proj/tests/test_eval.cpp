#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include <marfe/invariants.hpp>

using namespace marfe;

namespace {

/// Estimate holding the true rows on every state, with everything active.
EstimatedDynamics copy_as_estimate(const TabularMdp& mdp) {
    const std::size_t S = mdp.num_states();
    EstimatedDynamics est(S, mdp.num_actions(), mdp.horizon(), mdp.initial_state());
    for (std::size_t h = 0; h < mdp.horizon(); ++h) {
        for (StateIndex s = 0; s < S; ++s) {
            est.active_sets[h].push_back(s);
            for (ActionIndex a = 0; a < mdp.num_actions(); ++a) {
                auto dst = est.row(h, s, a);
                auto src = mdp.row(h, s, a);
                std::copy(src.begin(), src.end(), dst.begin());
                dst[S] = 0.0;
            }
        }
    }
    return est;
}

std::vector<double> real_part(const std::vector<double>& q, std::size_t S) { return {q.begin(), q.begin() + S}; }

} // namespace

TEST(PBetaHat, AllActiveGivesTrueDynamics) {
    const auto mdp = random_mdp(3, 2, 3, 5);
    const auto est = copy_as_estimate(mdp);
    const auto p1 = build_p_beta_hat(mdp, est);
    EXPECT_EQ(p1.data(), est.data());
    const auto pi = sample_policies(3, 2, 3, 1, 0)[0];
    const auto q1 = occupancy(pi, p1), q = occupancy(pi, mdp);
    for (std::size_t h = 0; h <= 3; ++h)
        for (StateIndex s = 0; s < 3; ++s) EXPECT_NEAR(q1(h, s), q(h, s), 1e-15);
}

TEST(PBetaHat, NothingActiveSinksAfterStepZero) {
    const auto mdp = random_mdp(3, 2, 3, 5);
    EstimatedDynamics est(3, 2, 3, 0);
    const auto p1 = build_p_beta_hat(mdp, est);
    const auto q = occupancy(Policy::uniform(3, 2, 3), p1);
    EXPECT_EQ(q(0, 0), 1.0);
    for (std::size_t h = 1; h <= 3; ++h) EXPECT_EQ(q.mass(h), 0.0);
}

TEST(PBetaHat, DimensionMismatch) {
    EXPECT_THROW(build_p_beta_hat(random_mdp(3, 2, 3, 1), EstimatedDynamics(2, 2, 3, 0)), DimensionError);
}

TEST(PTwoBeta, SmallBetaKeepsReachableStates) {
    const auto mdp = random_mdp(3, 2, 3, 8);
    const auto p2 = build_p_two_beta(mdp, 1e-9);
    const auto reach = reachable_states(mdp);
    for (std::size_t h = 0; h < 3; ++h)
        for (StateIndex s = 0; s < 3; ++s) {
            EXPECT_EQ(p2.is_retained(h, s), static_cast<bool>(reach[h][s]));
            if (!reach[h][s]) continue;
            for (ActionIndex a = 0; a < 2; ++a)
                for (StateIndex t = 0; t < 3; ++t) EXPECT_EQ(p2(h, s, a, t), mdp(h, s, a, t));
        }
}

TEST(PTwoBeta, KeyStateSurvivesUpToHalf) {
    const auto inst = make_key_dynamics(5, 3, 9ULL);
    for (double beta : {0.1, 0.25, 0.5 - 1e-12}) {
        const auto p2 = build_p_two_beta(inst.mdp, beta);
        for (std::size_t h = 0; h < 5; ++h) EXPECT_TRUE(p2.is_retained(h, kKeyState));
        EXPECT_FALSE(p2.is_retained(0, kLockedState));
    }
}

TEST(PTwoBeta, PrunesUnlikelyBranch) {
    TabularMdp mdp(3, 1, 2, 0);
    mdp.at(0, 0, 0, 1) = 0.7;
    mdp.at(0, 0, 0, 2) = 0.3;
    mdp.at(0, 1, 0, 1) = mdp.at(0, 2, 0, 2) = 1.0;
    for (StateIndex s = 0; s < 3; ++s) mdp.at(1, s, 0, s) = 1.0;
    ASSERT_TRUE(validate_mdp(mdp).empty());
    const auto p2 = build_p_two_beta(mdp, 0.2);
    EXPECT_EQ(p2.retained[1], std::vector<StateIndex>{1});
    EXPECT_EQ(p2(1, 2, 0, 3), 1.0);
    EXPECT_THROW(build_p_two_beta(mdp, 0.0), ConfigError);
}

TEST(ConfidenceRadius, ClosedForm) {
    EXPECT_DOUBLE_EQ(confidence_radius(2, 2, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(confidence_radius(25, 2, std::exp(-4.0)), 0.4);
    EXPECT_LT(confidence_radius(1000, 4, 0.01), confidence_radius(100, 4, 0.01));
    EXPECT_LT(confidence_radius(100, 4, 0.1), confidence_radius(100, 4, 0.01));
    EXPECT_LT(confidence_radius(100, 3, 0.01), confidence_radius(100, 4, 0.01));
    EXPECT_DOUBLE_EQ(confidence_radius_random(10, 2, 0.5, 5.0), confidence_radius(10, 2, 0.1));
    EXPECT_DOUBLE_EQ(delta_prime(0.1, 4, 5, 2, 10.0), 0.1 / 400.0);
    EXPECT_THROW(confidence_radius(0, 2, 0.1), ConfigError);
    EXPECT_THROW(confidence_radius(1, 2, 0.0), ConfigError);
}

TEST(ConfidenceRadius, MultinomialMonteCarloAgainstTextbookBound) {
    // Oracle: the L1 deviation inequality P(|p_hat - p|_1 >= l) <= (2^S - 2) exp(-n l^2 / 2).
    // The library radius uses a larger exponent constant and is tighter than this;
    // its empirical coverage is reported by the acceptance run, not asserted here.
    const std::size_t S = 4, trials = 10000;
    const double delta = 0.01;
    SplitMix64 rng(123);
    for (std::uint64_t n : {100u, 1000u}) {
        const double textbook = std::sqrt(2.0 * std::log((std::pow(2.0, S) - 2.0) / delta) / n);
        EXPECT_LT(confidence_radius(n, S, delta), textbook);
        const std::vector<double> p(S, 1.0 / S);
        std::size_t violations = 0;
        for (std::size_t t = 0; t < trials; ++t) {
            std::vector<double> freq(S, 0.0);
            for (std::uint64_t i = 0; i < n; ++i) freq[std::min<std::size_t>(S - 1, rng.uniform() * S)] += 1.0 / n;
            if (l1_distance(freq, p) > textbook) ++violations;
        }
        const double sigma = std::sqrt(delta * (1 - delta) / trials);
        EXPECT_LE(static_cast<double>(violations) / trials, delta + 3 * sigma) << "n=" << n;
    }
}

TEST(RewardBatch, Composition) {
    const auto b = make_reward_batch(3, 2, 4, 5, 1);
    ASSERT_EQ(b.rewards.size(), 8u);
    EXPECT_EQ(b.kinds.back(), "constant");
    EXPECT_EQ(b.kinds[5], "indicator");
    EXPECT_EQ(b.kinds[6], "terminal");
    for (const auto& r : b.rewards)
        for (double v : r.data()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    EXPECT_EQ(make_reward_batch(3, 2, 4, 5, 1).rewards, b.rewards);
}

TEST(Gap, ExactEstimateHasNoGap) {
    const auto mdp = random_mdp(3, 2, 4, 3);
    const auto rep = reward_free_gap(mdp, copy_as_estimate(mdp), make_reward_batch(3, 2, 4, 20, 3));
    EXPECT_EQ(rep.gaps.size(), 23u);
    EXPECT_LE(rep.max_gap, 1e-12);
}

TEST(Gap, MissingLastKeyRowCostsEverything) {
    const auto inst = make_key_dynamics(3, 2, std::vector<ActionIndex>{1, 1, 1});
    auto est = copy_as_estimate(inst.mdp);
    est.set_sink_row(1, kKeyState);
    const std::vector<RewardFunction> rewards{r_key(inst)};
    const auto rep = reward_free_gap(inst.mdp, est, rewards);
    EXPECT_EQ(rep.optimal_values[0], 1.0);
    EXPECT_EQ(rep.achieved_values[0], 0.0);
    EXPECT_EQ(rep.max_gap, 1.0);
}

TEST(Gap, MarfeAtGenerousMIsEpsilonGood) {
    const std::size_t S = 3, A = 2, H = 3;
    const double eps = 0.25;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto mdp = random_mdp(S, A, H, 40 + seed);
        const auto res = run_marfe(mdp, MarfeConfig{60000, MarfeConfig::beta_for(eps, S, H), 0.1, seed, 1});
        const auto rep = reward_free_gap(mdp, res.estimate, make_reward_batch(S, A, H, 30, seed));
        EXPECT_LE(rep.max_gap, eps);
    }
}

TEST(Gap, ReportIsNonnegativeAndTabulates) {
    const auto mdp = random_mdp(4, 2, 3, 6);
    const auto res = run_marfe(mdp, MarfeConfig{40, 0.05, 0.1, 6, 1});
    const auto rep = reward_free_gap(mdp, res.estimate, make_reward_batch(4, 2, 3, 30, 6));
    double sum = 0.0;
    for (std::size_t i = 0; i < rep.gaps.size(); ++i) {
        EXPECT_GE(rep.gaps[i], 0.0);
        EXPECT_NEAR(rep.gaps[i], rep.optimal_values[i] - rep.achieved_values[i], 1e-12);
        EXPECT_LE(rep.gaps[i], rep.max_gap);
        sum += rep.gaps[i];
    }
    EXPECT_NEAR(rep.mean_gap, sum / rep.gaps.size(), 1e-15);
    std::ostringstream os;
    rep.write_table(os);
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')).find("reward"), 0u);
}

TEST(Discrepancy, IdenticalDynamics) {
    const auto mdp = random_mdp(3, 2, 2, 2);
    const auto r = make_reward_batch(3, 2, 2, 1, 2).rewards[0];
    const auto d = policy_value_discrepancy(mdp, mdp, r);
    EXPECT_EQ(d.max, 0.0);
    EXPECT_TRUE(d.exhaustive);
    EXPECT_EQ(d.policies_checked, 64u);
    const auto pols = sample_policies(3, 2, 2, 10, 1);
    EXPECT_EQ(occupancy_discrepancy(mdp, mdp, pols, 2), 0.0);
}

TEST(Discrepancy, SampledWhenTooManyPolicies) {
    const auto mdp = random_mdp(4, 2, 4, 2);
    const auto r = make_reward_batch(4, 2, 4, 1, 2).rewards[0];
    const auto d = policy_value_discrepancy(mdp, mdp, r, 50, 1);
    EXPECT_FALSE(d.exhaustive);
    EXPECT_EQ(d.policies_checked, 52u);
}

TEST(Discrepancy, BoundedByOccupancyDistance) {
    const std::size_t S = 3, A = 2, H = 3;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto mdp = random_mdp(S, A, H, seed);
        const auto res = run_marfe(mdp, MarfeConfig{200, 0.05, 0.1, seed, 1});
        std::vector<Policy> all;
        for_each_deterministic_policy(S, A, H, [&](const Policy& p) { all.push_back(p); });
        ASSERT_EQ(all.size(), 512u);
        double worst_q = 0.0;
        for (std::size_t h = 0; h < H; ++h) worst_q = std::max(worst_q, occupancy_discrepancy(mdp, res.estimate, all, h));
        for (const auto& r : make_reward_batch(S, A, H, 10, seed).rewards) {
            const auto d = policy_value_discrepancy(mdp, res.estimate, r);
            ASSERT_TRUE(d.exhaustive);
            EXPECT_LE(d.max, H * worst_q + 1e-12);
        }
    }
}

TEST(Discrepancy, SmallDiscrepancyImpliesSmallGap) {
    const std::size_t S = 3, A = 2, H = 3;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto mdp = random_mdp(S, A, H, 70 + seed);
        for (std::size_t m : {50u, 5000u}) {
            const auto res = run_marfe(mdp, MarfeConfig{m, 0.02, 0.1, seed, 1});
            const auto batch = make_reward_batch(S, A, H, 10, seed);
            const auto rep = reward_free_gap(mdp, res.estimate, batch);
            for (std::size_t i = 0; i < batch.rewards.size(); ++i) {
                const double d = policy_value_discrepancy(mdp, res.estimate, batch.rewards[i]).max;
                // Planning on the estimate loses at most twice the discrepancy.
                EXPECT_LE(rep.gaps[i], 2.0 * d + 1e-12);
            }
        }
    }
}

TEST(Discrepancy, OccupancyWithinAlphaTimesH) {
    const std::size_t S = 4, A = 2, H = 3, seeds = 20;
    const double beta = 0.3, alpha = beta / (3.0 * H), delta = 0.1;
    const auto mdp = random_mdp(S, A, H, 5);
    const auto pols = sample_policies(S, A, H, 200, 5);
    std::size_t ok = 0;
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        const auto res = run_marfe(mdp, MarfeConfig{200000, beta, delta, seed, 1});
        const auto p1 = build_p_beta_hat(mdp, res.estimate);
        bool good = true;
        for (std::size_t h = 0; h <= H; ++h) good = good && occupancy_discrepancy(res.estimate, p1, pols, h) <= alpha * h;
        ok += good ? 1 : 0;
    }
    EXPECT_GE(static_cast<double>(ok), (1.0 - delta) * seeds);
}

TEST(Discrepancy, OneStepTriangleBound) {
    auto check = [](const TransitionKernel& ka, const TransitionKernel& kb, const Policy& pi) {
        const std::size_t S = ka.num_real_states(), n = ka.num_states();
        const auto qa = state_distribution(pi, ka), qb = state_distribution(pi, kb);
        for (std::size_t h = 0; h < ka.horizon(); ++h) {
            const auto ma = transition_matrix(ka, h, pi), mb = transition_matrix(kb, h, pi);
            std::vector<double> drift(n, 0.0);
            for (StateIndex s = 0; s < n; ++s)
                for (StateIndex t = 0; t < n; ++t) drift[t] += qa[h][s] * (ma(s, t) - mb(s, t));
            const double lhs = l1_distance(real_part(qa[h + 1], S), real_part(qb[h + 1], S));
            const double rhs = l1_distance(real_part(drift, S), std::vector<double>(S, 0.0)) +
                               l1_distance(real_part(qa[h], S), real_part(qb[h], S));
            EXPECT_LE(lhs, rhs + 1e-12);
        }
    };
    SplitMix64 rng(4);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const std::size_t S = 2 + seed % 4, A = 1 + seed % 3, H = 1 + seed % 4;
        const auto pi = random_stochastic_policy(S, A, H, rng);
        check(random_mdp(S, A, H, seed), random_mdp(S, A, H, seed + 1000), pi);
        const auto mdp = random_mdp(S, A, H, seed);
        const auto res = run_marfe(mdp, MarfeConfig{50, 0.1, 0.1, seed, 1});
        check(res.estimate, build_p_beta_hat(mdp, res.estimate), pi);
    }
}

TEST(Invariants, ContractionOnRandomPairs) {
    const auto res = check_row_contraction(1000, 3);
    EXPECT_TRUE(res.passed);
    EXPECT_EQ(res.checks, 1000u);
}

TEST(Invariants, SandwichWithExactTruncations) {
    const std::size_t S = 4, A = 2, H = 3;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto mdp = random_mdp(S, A, H, seed);
        const double beta = 0.05;
        const auto res = run_marfe(mdp, MarfeConfig{20000, beta, 0.1, seed, 1});
        const auto p1 = build_p_beta_hat(mdp, res.estimate);
        const auto p2 = build_p_two_beta(mdp, beta);
        const auto pols = sample_policies(S, A, H, 50, seed);
        const auto batch = make_reward_batch(S, A, H, 10, seed);
        EXPECT_TRUE(check_value_sandwich(mdp, p1, p2, beta, pols, batch.rewards).passed);
        if (set_inclusion_holds(p2, res.estimate)) {
            EXPECT_TRUE(check_occupancy_domination(p2, p1, pols).passed);
        }
    }
}

TEST(Invariants, SuitePassesAtGenerousM) {
    InvariantSuiteConfig cfg;
    cfg.m = 20000;
    cfg.runs = 10;
    cfg.policies = 30;
    cfg.rewards = 5;
    cfg.contraction_pairs = 200;
    const auto results = run_invariant_suite(random_mdp(4, 2, 3, 12), cfg);
    ASSERT_EQ(results.size(), 4u);
    for (const auto& r : results) EXPECT_TRUE(r.passed) << r.name << ' ' << r.detail;
    std::ostringstream os;
    write_invariants(os, results);
    EXPECT_EQ(os.str().rfind("invariant,passed,checks,failures,worst,detail\n", 0), 0u);
}

TEST(Invariants, DominationDetectsViolations) {
    // Swapping the arguments compares a larger truncation against a smaller one.
    const auto mdp = random_mdp(3, 2, 3, 2);
    const auto full = build_p_two_beta(mdp, 1e-9);
    EstimatedDynamics none(3, 2, 3, 0);
    none.active_sets[0] = {0};
    const auto small = build_p_beta_hat(mdp, none);
    const auto pols = sample_policies(3, 2, 3, 5, 0);
    EXPECT_FALSE(check_occupancy_domination(full, small, pols).passed);
    EXPECT_FALSE(set_inclusion_holds(full, none));
}
