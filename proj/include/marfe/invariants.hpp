#pragma once

// Executable checks of the properties the analysis relies on. Each check
// returns an InvariantResult so the CLI can tabulate them.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "algorithm.hpp"
#include "eval.hpp"
#include "keydyn.hpp"

namespace marfe {

struct InvariantResult {
    InvariantResult() = default;
    explicit InvariantResult(std::string n) : name(std::move(n)) {}

    std::string name;
    bool passed = false;
    std::size_t checks = 0;
    std::size_t failures = 0;
    double worst = 0.0;  ///< largest violation margin seen (0 when none)
    std::string detail;
};

inline void write_invariants(std::ostream& os, std::span<const InvariantResult> results) {
    os << "invariant,passed,checks,failures,worst,detail\n";
    os.precision(17);
    for (const auto& r : results)
        os << r.name << ',' << (r.passed ? "true" : "false") << ',' << r.checks << ',' << r.failures << ','
           << r.worst << ',' << r.detail << '\n';
}

inline constexpr double kInvariantSlack = 1e-12;

/// ||vM||_1 <= ||v||_1 for random signed v and random row-stochastic M.
inline InvariantResult check_row_contraction(std::size_t pairs, std::uint64_t seed, std::size_t max_dim = 8) {
    InvariantResult res{"row_stochastic_contraction"};
    SplitMix64 rng(seed);
    for (std::size_t i = 0; i < pairs; ++i) {
        const std::size_t n = 1 + rng() % max_dim;
        std::vector<double> v(n), m(n * n);
        for (auto& x : v) x = 2.0 * rng.uniform() - 1.0;
        for (std::size_t r = 0; r < n; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < n; ++c) sum += (m[r * n + c] = rng.uniform());
            for (std::size_t c = 0; c < n; ++c) m[r * n + c] /= sum;
        }
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            double x = 0.0;
            for (std::size_t r = 0; r < n; ++r) x += v[r] * m[r * n + c];
            lhs += std::abs(x);
        }
        for (double x : v) rhs += std::abs(x);
        ++res.checks;
        if (lhs > rhs + kInvariantSlack) {
            ++res.failures;
            res.worst = std::max(res.worst, lhs - rhs);
        }
    }
    res.passed = res.failures == 0;
    return res;
}

/// V^pi_{P^bhat} <= V^pi_P <= V^pi_{P^2beta} + 2 beta H^2 S for every pair.
inline InvariantResult check_value_sandwich(const TabularMdp& mdp, const TransitionKernel& p_beta_hat,
                                            const TransitionKernel& p_two_beta, double beta,
                                            std::span<const Policy> policies, std::span<const RewardFunction> rewards) {
    InvariantResult res{"value_sandwich"};
    const double H = static_cast<double>(mdp.horizon()), S = static_cast<double>(mdp.num_states());
    const double slack = 2.0 * beta * H * H * S;
    for (const auto& pi : policies) {
        for (const auto& r : rewards) {
            const double lo = policy_value(pi, p_beta_hat, r);
            const double mid = policy_value(pi, mdp, r);
            const double hi = policy_value(pi, p_two_beta, r) + slack;
            ++res.checks;
            const double margin = std::max(lo - mid, mid - hi);
            if (margin > kInvariantSlack) {
                ++res.failures;
                res.worst = std::max(res.worst, margin);
            }
        }
    }
    res.passed = res.failures == 0;
    return res;
}

/// S^{2beta}_h is a subset of the active set at every h.
inline bool set_inclusion_holds(const TruncatedDynamics& p_two_beta, const EstimatedDynamics& est) {
    for (std::size_t h = 0; h < p_two_beta.horizon(); ++h)
        for (StateIndex s : p_two_beta.retained.at(h))
            if (!est.is_active(h, s)) return false;
    return true;
}

/// q_h(s|pi, P^2beta) <= q_h(s|pi, P^bhat) for s in S^{2beta}_h.
inline InvariantResult check_occupancy_domination(const TruncatedDynamics& p_two_beta,
                                                  const TruncatedDynamics& p_beta_hat,
                                                  std::span<const Policy> policies) {
    InvariantResult res{"occupancy_domination"};
    for (const auto& pi : policies) {
        const OccupancyTable q2 = occupancy(pi, p_two_beta);
        const OccupancyTable q1 = occupancy(pi, p_beta_hat);
        for (std::size_t h = 0; h < p_two_beta.horizon(); ++h) {
            for (StateIndex s : p_two_beta.retained[h]) {
                ++res.checks;
                const double margin = q2(h, s) - q1(h, s);
                if (margin > kInvariantSlack) {
                    ++res.failures;
                    res.worst = std::max(res.worst, margin);
                }
            }
        }
    }
    res.passed = res.failures == 0;
    return res;
}

inline InvariantResult check_survivor_monotonicity(const SurvivorCurve& curve) {
    InvariantResult res{"survivor_monotonicity"};
    for (const auto& t : curve.counts)
        for (const auto& p : t)
            for (std::size_t h = 0; h + 1 < p.size(); ++h) {
                ++res.checks;
                if (p[h + 1] > p[h] || p[h] > curve.agents) ++res.failures;
            }
    res.passed = res.failures == 0;
    return res;
}

/// Every active (h,s,a) satisfies ||Phat - P^bhat||_1 <= confidence_radius(N, S, delta').
/// Unvisited active pairs count as violations.
inline bool good_event_holds(const TabularMdp& mdp, const EstimatedDynamics& est, double delta_prime) {
    const TruncatedDynamics pbh = build_p_beta_hat(mdp, est);
    const std::size_t S = mdp.num_states();
    for (std::size_t h = 0; h < mdp.horizon(); ++h)
        for (StateIndex s : est.active_sets[h])
            for (ActionIndex a = 0; a < mdp.num_actions(); ++a) {
                const std::uint64_t n = est.visits(h, s, a);
                if (n == 0) return false;
                auto x = est.row(h, s, a), y = pbh.row(h, s, a);
                if (l1_distance(x.subspan(0, S), y.subspan(0, S)) > confidence_radius(n, S, delta_prime)) return false;
            }
    return true;
}

struct InvariantSuiteConfig {
    std::size_t m = 100000;
    double beta = 0.05;
    std::size_t runs = 20;
    double required_fraction = 0.9;
    std::size_t policies = 100;
    std::size_t rewards = 20;
    std::size_t contraction_pairs = 1000;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

/// Runs MARFE `runs` times on `mdp` and checks the value sandwich, set
/// inclusion (in at least `required_fraction` of runs), occupancy domination
/// (on runs where inclusion holds) and row-stochastic contraction.
inline std::vector<InvariantResult> run_invariant_suite(const TabularMdp& mdp, const InvariantSuiteConfig& cfg) {
    const std::size_t S = mdp.num_states(), A = mdp.num_actions(), H = mdp.horizon();
    const RngPlan base(cfg.seed);
    const auto policies = sample_policies(S, A, H, cfg.policies, base.stream_seed(1, 0));
    const auto batch = make_reward_batch(S, A, H, cfg.rewards, base.stream_seed(2, 0));
    const TruncatedDynamics p2 = build_p_two_beta(mdp, cfg.beta);

    InvariantResult sandwich{"value_sandwich"}, inclusion{"set_inclusion"}, domination{"occupancy_domination"};
    for (std::size_t run = 0; run < cfg.runs; ++run) {
        MarfeConfig mc{cfg.m, cfg.beta, 0.1, base.derive(run).master_seed(), cfg.threads};
        const ProtocolResult res = run_marfe(mdp, mc);
        const TruncatedDynamics p1 = build_p_beta_hat(mdp, res.estimate);

        const auto sw = check_value_sandwich(mdp, p1, p2, cfg.beta, policies, batch.rewards);
        sandwich.checks += sw.checks;
        sandwich.failures += sw.failures;
        sandwich.worst = std::max(sandwich.worst, sw.worst);

        ++inclusion.checks;
        if (!set_inclusion_holds(p2, res.estimate)) {
            ++inclusion.failures;
            continue;
        }
        const auto dom = check_occupancy_domination(p2, p1, policies);
        domination.checks += dom.checks;
        domination.failures += dom.failures;
        domination.worst = std::max(domination.worst, dom.worst);
    }
    sandwich.passed = sandwich.failures == 0;
    const double frac = 1.0 - static_cast<double>(inclusion.failures) / static_cast<double>(inclusion.checks);
    inclusion.passed = frac >= cfg.required_fraction;
    inclusion.worst = 1.0 - frac;
    inclusion.detail = "fraction_included=" + std::to_string(frac);
    domination.passed = domination.failures == 0;
    return {sandwich, inclusion, domination, check_row_contraction(cfg.contraction_pairs, base.stream_seed(3, 0))};
}

} // namespace marfe
