#pragma once

// Reward-free quality metrics and the truncated-dynamics oracles used to
// check the analysis empirically. All L1 norms run over the real states only;
// the sink coordinate is excluded.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "estimate.hpp"
#include "planning.hpp"

namespace marfe {

/// True rows on the retained states of each timestep; sink rows elsewhere.
class TruncatedDynamics : public TransitionKernel {
public:
    TruncatedDynamics() = default;
    TruncatedDynamics(std::size_t real_states, std::size_t A, std::size_t H, StateIndex s0)
        : TransitionKernel(TransitionKernel::sink_augmented(real_states, A, H, s0)), retained(H) {}

    std::vector<std::vector<StateIndex>> retained;

    bool is_retained(std::size_t h, StateIndex s) const {
        return std::binary_search(retained.at(h).begin(), retained.at(h).end(), s);
    }

    void retain(const TabularMdp& base, std::size_t h, StateIndex s) {
        const std::size_t S = base.num_states();
        for (ActionIndex a = 0; a < base.num_actions(); ++a) {
            auto dst = row(h, s, a);
            auto src = base.row(h, s, a);
            std::copy(src.begin(), src.end(), dst.begin());
            dst[S] = 0.0;
        }
        auto& set = retained.at(h);
        set.insert(std::upper_bound(set.begin(), set.end(), s), s);
    }
};

namespace detail {
inline void check_same_space(const TabularMdp& mdp, const TransitionKernel& k) {
    if (k.num_real_states() != mdp.num_states() || k.num_actions() != mdp.num_actions() ||
        k.horizon() != mdp.horizon()) {
        throw DimensionError("dynamics do not share the MDP's state/action/horizon shape");
    }
}
} // namespace detail

/// True dynamics restricted to the estimate's active sets.
inline TruncatedDynamics build_p_beta_hat(const TabularMdp& mdp, const EstimatedDynamics& est) {
    detail::check_same_space(mdp, est);
    if (est.active_sets.size() != mdp.horizon()) throw DimensionError("estimate carries no active sets");
    TruncatedDynamics out(mdp.num_states(), mdp.num_actions(), mdp.horizon(), mdp.initial_state());
    for (std::size_t h = 0; h < mdp.horizon(); ++h)
        for (StateIndex s : est.active_sets[h]) out.retain(mdp, h, s);
    return out;
}

/// Forward-inductive truncation: at each h keep the states whose max reach
/// probability under the already-truncated steps 0..h-1 is at least 2*beta.
inline TruncatedDynamics build_p_two_beta(const TabularMdp& mdp, double beta) {
    if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("build_p_two_beta: beta must lie in (0,1)");
    TruncatedDynamics out(mdp.num_states(), mdp.num_actions(), mdp.horizon(), mdp.initial_state());
    for (std::size_t h = 0; h < mdp.horizon(); ++h)
        for (StateIndex s = 0; s < mdp.num_states(); ++s)
            if (max_reach_policy(out, h, s).value >= 2.0 * beta) out.retain(mdp, h, s);
    return out;
}

/// sqrt((ln(1/delta) + 2S) / (2n)): L1 radius of an n-sample empirical
/// distribution over S outcomes, valid with probability 1 - delta.
inline double confidence_radius(std::uint64_t n, std::size_t S, double delta) {
    if (n < 1) throw ConfigError("confidence_radius: n must be >= 1");
    if (S < 1) throw ConfigError("confidence_radius: S must be >= 1");
    if (!(delta > 0.0 && delta <= 1.0)) throw ConfigError("confidence_radius: delta must lie in (0,1]");
    return std::sqrt((std::log(1.0 / delta) + 2.0 * static_cast<double>(S)) / (2.0 * static_cast<double>(n)));
}

/// Same radius when the sample count is itself random with support size `supp`.
inline double confidence_radius_random(std::uint64_t n, std::size_t S, double delta, double supp) {
    if (!(supp >= 1.0)) throw ConfigError("confidence_radius_random: supp must be >= 1");
    return confidence_radius(n, S, delta / supp);
}

/// delta' = delta / (S H A supp(m)).
inline double delta_prime(double delta, std::size_t S, std::size_t H, std::size_t A, double supp) {
    return delta / (static_cast<double>(S) * static_cast<double>(H) * static_cast<double>(A) * supp);
}

inline double l1_distance(std::span<const double> x, std::span<const double> y) {
    double d = 0.0;
    for (std::size_t i = 0; i < std::min(x.size(), y.size()); ++i) d += std::abs(x[i] - y[i]);
    return d;
}

struct RewardBatch {
    std::vector<RewardFunction> rewards;
    std::vector<std::string> kinds;
};

/// `random_count` i.i.d. uniform rewards, then three structured ones: an
/// indicator on one (H-1, s, a), a terminal-step-only reward and the constant 1.
inline RewardBatch make_reward_batch(std::size_t S, std::size_t A, std::size_t H, std::size_t random_count,
                                     std::uint64_t seed) {
    RewardBatch b;
    SplitMix64 rng(seed);
    for (std::size_t i = 0; i < random_count; ++i) {
        b.rewards.push_back(random_reward(S, A, H, rng));
        b.kinds.push_back("uniform");
    }
    RewardFunction indicator(S, A, H);
    indicator.set(H - 1, rng() % S, rng() % A, 1.0);
    b.rewards.push_back(indicator);
    b.kinds.push_back("indicator");

    RewardFunction terminal(S, A, H);
    for (StateIndex s = 0; s < S; ++s)
        for (ActionIndex a = 0; a < A; ++a) terminal.set(H - 1, s, a, rng.uniform());
    b.rewards.push_back(terminal);
    b.kinds.push_back("terminal");

    b.rewards.push_back(RewardFunction(S, A, H, std::vector<double>(S * A * H, 1.0)));
    b.kinds.push_back("constant");
    return b;
}

/// Per-reward gap V*_{P,r} - V^{pi_r}_{P,r}, where pi_r is optimal on the estimate.
struct GapReport {
    std::vector<std::string> kinds;
    std::vector<double> optimal_values;
    std::vector<double> achieved_values;
    std::vector<double> gaps;
    double max_gap = 0.0;
    double mean_gap = 0.0;

    void write_table(std::ostream& os) const {
        os << "reward,kind,optimal_value,achieved_value,gap\n";
        os.precision(17);
        for (std::size_t i = 0; i < gaps.size(); ++i)
            os << i << ',' << kinds[i] << ',' << optimal_values[i] << ',' << achieved_values[i] << ',' << gaps[i] << '\n';
    }
};

inline GapReport reward_free_gap(const TabularMdp& mdp, const TransitionKernel& est, const RewardBatch& batch) {
    detail::check_same_space(mdp, est);
    GapReport rep;
    for (std::size_t i = 0; i < batch.rewards.size(); ++i) {
        const RewardFunction& r = batch.rewards[i];
        const double best = optimal_policy(mdp, r).value;
        const double got = policy_value(optimal_policy(est, r).policy, mdp, r);
        rep.kinds.push_back(i < batch.kinds.size() ? batch.kinds[i] : "reward");
        rep.optimal_values.push_back(best);
        rep.achieved_values.push_back(got);
        // Never negative in exact arithmetic; rounding can leave a few ulps below zero.
        rep.gaps.push_back(std::max(0.0, best - got));
    }
    if (!rep.gaps.empty()) {
        rep.max_gap = *std::max_element(rep.gaps.begin(), rep.gaps.end());
        double sum = 0.0;
        for (double g : rep.gaps) sum += g;
        rep.mean_gap = sum / static_cast<double>(rep.gaps.size());
    }
    return rep;
}

inline GapReport reward_free_gap(const TabularMdp& mdp, const TransitionKernel& est,
                                 std::span<const RewardFunction> rewards) {
    RewardBatch b;
    b.rewards.assign(rewards.begin(), rewards.end());
    return reward_free_gap(mdp, est, b);
}

/// Calls fn(policy) for all A^(S*H) deterministic policies, in lexicographic
/// order of the flat (h, s) action table with the last entry varying fastest.
template <class Fn>
void for_each_deterministic_policy(std::size_t S, std::size_t A, std::size_t H, Fn&& fn) {
    std::vector<ActionIndex> acts(S * H, 0);
    while (true) {
        fn(Policy::deterministic(S, A, H, acts));
        std::size_t i = acts.size();
        while (i > 0 && acts[i - 1] + 1 == A) acts[--i] = 0;
        if (i == 0) return;
        ++acts[i - 1];
    }
}

inline double deterministic_policy_count(std::size_t S, std::size_t A, std::size_t H) {
    return std::pow(static_cast<double>(A), static_cast<double>(S * H));
}

/// Uniform random deterministic policies.
inline std::vector<Policy> sample_policies(std::size_t S, std::size_t A, std::size_t H, std::size_t count,
                                           std::uint64_t seed) {
    SplitMix64 rng(seed);
    std::vector<Policy> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(random_deterministic_policy(S, A, H, rng));
    return out;
}

struct DiscrepancyResult {
    double max = 0.0;
    /// True when every deterministic policy was evaluated; otherwise `max` is a lower bound.
    bool exhaustive = false;
    std::size_t policies_checked = 0;
};

inline constexpr double kExhaustivePolicyLimit = 4096.0;

/// max over policies of |V^pi_A - V^pi_B| for one reward. Exhaustive when
/// A^(S*H) <= 4096; otherwise `sample_size` random deterministic policies plus
/// the optimal policies of both dynamics.
inline DiscrepancyResult policy_value_discrepancy(const TransitionKernel& dyn_a, const TransitionKernel& dyn_b,
                                                  const RewardFunction& reward, std::size_t sample_size = 200,
                                                  std::uint64_t seed = 0) {
    if (dyn_a.num_real_states() != dyn_b.num_real_states() || dyn_a.num_actions() != dyn_b.num_actions() ||
        dyn_a.horizon() != dyn_b.horizon()) {
        throw DimensionError("policy_value_discrepancy: dynamics shapes differ");
    }
    const std::size_t S = dyn_a.num_real_states(), A = dyn_a.num_actions(), H = dyn_a.horizon();
    DiscrepancyResult res;
    auto visit = [&](const Policy& pi) {
        const double d = std::abs(policy_value(pi, dyn_a, reward) - policy_value(pi, dyn_b, reward));
        res.max = std::max(res.max, d);
        ++res.policies_checked;
    };
    if (deterministic_policy_count(S, A, H) <= kExhaustivePolicyLimit) {
        res.exhaustive = true;
        for_each_deterministic_policy(S, A, H, visit);
        return res;
    }
    for (const auto& pi : sample_policies(S, A, H, sample_size, seed)) visit(pi);
    visit(optimal_policy(dyn_a, reward).policy);
    visit(optimal_policy(dyn_b, reward).policy);
    return res;
}

/// max over `policies` of ||q_h(.|pi, A) - q_h(.|pi, B)||_1 over the real states.
inline double occupancy_discrepancy(const TransitionKernel& dyn_a, const TransitionKernel& dyn_b,
                                    std::span<const Policy> policies, std::size_t h) {
    if (dyn_a.num_real_states() != dyn_b.num_real_states() || dyn_a.horizon() != dyn_b.horizon()) {
        throw DimensionError("occupancy_discrepancy: dynamics shapes differ");
    }
    if (h > dyn_a.horizon()) throw DimensionError("occupancy_discrepancy: timestep out of range");
    double worst = 0.0;
    for (const auto& pi : policies) {
        const auto qa = occupancy(pi, dyn_a).step(h);
        const auto qb = occupancy(pi, dyn_b).step(h);
        worst = std::max(worst, l1_distance(qa, qb));
    }
    return worst;
}

} // namespace marfe
