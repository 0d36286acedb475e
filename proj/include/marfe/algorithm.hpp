#pragma once

// MARFE: layer-wise reward-free exploration in exactly H phases. Phase i
// estimates the timestep-i dynamics of the states that are beta-reachable
// under the estimate built in phases 0..i-1, sending an equal share of agents
// to every (active state, action) pair along a max-reach policy.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "estimate.hpp"
#include "planning.hpp"
#include "simulator.hpp"

namespace marfe {

struct MarfeConfig {
    std::size_t m = 0;
    double beta = 0.0;
    double delta = 0.1;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    /// Diagnostic only: alpha = beta / (3H).
    double alpha(std::size_t horizon) const { return beta / (3.0 * static_cast<double>(horizon)); }

    /// beta = epsilon / (2 H^2 S).
    static double beta_for(double epsilon, std::size_t S, std::size_t H) {
        return epsilon / (2.0 * static_cast<double>(H) * static_cast<double>(H) * static_cast<double>(S));
    }

    void validate() const {
        if (m < 1) throw ConfigError("MarfeConfig: m must be >= 1");
        if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("MarfeConfig: beta must lie in (0,1)");
        if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("MarfeConfig: delta must lie in (0,1)");
    }
};

struct ActiveSet {
    std::vector<StateIndex> states;
    /// Max-reach policy and its reach probability for every real state.
    std::map<StateIndex, Policy> policies;
    std::map<StateIndex, double> reach;
};

/// Active states at timestep i under the partial estimate (only steps < i are
/// read). A state is active iff its max reach probability is at least beta.
inline ActiveSet compute_active_set(const TransitionKernel& partial, std::size_t i, double beta) {
    if (i >= partial.horizon()) throw DimensionError("compute_active_set: timestep out of range");
    ActiveSet out;
    for (StateIndex s = 0; s < partial.num_real_states(); ++s) {
        ValueResult r = max_reach_policy(partial, i, s);
        if (r.value >= beta) out.states.push_back(s);
        out.reach.emplace(s, r.value);
        out.policies.emplace(s, std::move(r.policy));
    }
    return out;
}

using AgentGroups = std::map<std::pair<StateIndex, ActionIndex>, std::vector<std::size_t>>;

/// Splits agents 0..m-1 into |states|*A contiguous groups ordered by (state
/// position, action). Sizes differ by at most one; leftovers go to the first
/// groups.
inline AgentGroups partition_agents(std::size_t m, std::span<const StateIndex> states, std::size_t A) {
    const std::size_t groups = states.size() * A;
    if (groups == 0) throw ConfigError("partition_agents: no (state, action) groups to fill");
    if (m < groups) {
        throw ConfigError("partition_agents: " + std::to_string(m) + " agents cannot cover " +
                          std::to_string(groups) + " groups (deficit " + std::to_string(groups - m) + ")");
    }
    const std::size_t base = m / groups, extra = m % groups;
    AgentGroups out;
    std::size_t next = 0, g = 0;
    for (StateIndex s : states) {
        for (ActionIndex a = 0; a < A; ++a, ++g) {
            const std::size_t size = base + (g < extra ? 1 : 0);
            std::vector<std::size_t> members(size);
            for (auto& j : members) j = next++;
            out.emplace(std::make_pair(s, a), std::move(members));
        }
    }
    return out;
}

/// Estimated rows of one timestep over S real states plus the sink (index S).
struct PhaseEstimate {
    std::size_t timestep = 0;
    std::size_t num_real_states = 0;
    std::size_t num_actions = 0;
    std::vector<double> rows;
    TransitionCounts counts;
    std::vector<ZeroVisitWarning> warnings;

    double operator()(StateIndex s, ActionIndex a, StateIndex next) const {
        return rows[(s * num_actions + a) * (num_real_states + 1) + next];
    }

    /// Writes the slice into `est` at `timestep`, along with its counts.
    void apply(EstimatedDynamics& est, std::span<const StateIndex> active) const {
        const std::size_t n = num_real_states + 1;
        for (StateIndex s = 0; s < n; ++s)
            for (ActionIndex a = 0; a < num_actions; ++a) {
                auto dst = est.row(timestep, s, a);
                for (StateIndex t = 0; t < n; ++t) dst[t] = (*this)(s, a, t);
            }
        est.active_sets.at(timestep).assign(active.begin(), active.end());
        for (const auto& [k, v] : counts) est.counts[k] = v;
        est.warnings.insert(est.warnings.end(), warnings.begin(), warnings.end());
    }
};

/// Empirical rows N_i(s,a,s')/N_i(s,a) for active states; sink rows for
/// inactive states. Active (s,a) with fewer than `min_count` visits are also
/// routed to the sink, with a warning when they were never visited.
inline PhaseEstimate build_phase_estimate(const PhaseLog& log, std::span<const StateIndex> active, std::size_t S,
                                          std::size_t A, std::size_t i, std::uint64_t min_count = 1) {
    PhaseEstimate pe;
    pe.timestep = i;
    pe.num_real_states = S;
    pe.num_actions = A;
    const std::size_t n = S + 1;
    pe.rows.assign(n * A * n, 0.0);
    std::vector<std::uint64_t> tally(S * A * S, 0);
    for (const auto& [k, v] : log.counts) {
        if (k.h != i) continue;
        tally[(k.s * A + k.a) * S + k.next] += v;
    }
    std::vector<bool> is_active(S, false);
    for (StateIndex s : active) is_active.at(s) = true;
    for (StateIndex s = 0; s < n; ++s) {
        for (ActionIndex a = 0; a < A; ++a) {
            double* row = pe.rows.data() + (s * A + a) * n;
            if (s == S || !is_active[s]) {
                row[S] = 1.0;
                continue;
            }
            std::uint64_t total = 0;
            for (StateIndex t = 0; t < S; ++t) total += tally[(s * A + a) * S + t];
            for (StateIndex t = 0; t < S; ++t) {
                const std::uint64_t c = tally[(s * A + a) * S + t];
                if (c != 0) pe.counts[{i, s, a, t}] = c;
            }
            if (total == 0) pe.warnings.push_back({i, s, a});
            if (total == 0 || total < min_count) {
                row[S] = 1.0;
                continue;
            }
            for (StateIndex t = 0; t < S; ++t)
                row[t] = static_cast<double>(tally[(s * A + a) * S + t]) / static_cast<double>(total);
        }
    }
    return pe;
}

namespace detail {

/// Shared driver for reach-routed layer-wise explorers. With `gate` set, only
/// states whose max reach probability is >= beta are explored; otherwise every
/// state gets a group. Rows need `min_count` visits to be kept.
class LayerwiseExplorer : public Explorer {
public:
    LayerwiseExplorer(double beta, bool gate, std::uint64_t min_count)
        : beta_(beta), gate_(gate), min_count_(min_count) {}

    void begin(const EnvironmentSpec& env, std::size_t phases, std::size_t agents) override {
        if (phases != env.horizon) {
            throw ConfigError("layer-wise exploration runs exactly H=" + std::to_string(env.horizon) +
                              " phases, got " + std::to_string(phases));
        }
        if (agents < env.num_states * env.num_actions) {
            throw ConfigError("m=" + std::to_string(agents) + " is below S*A=" +
                              std::to_string(env.num_states * env.num_actions));
        }
        env_ = env;
        m_ = agents;
        est_ = EstimatedDynamics(env.num_states, env.num_actions, env.horizon, env.initial_state, beta_);
        incorporated_ = 0;
        active_.clear();
        reach_.clear();
        group_sizes_.clear();
    }

    PhasePlan plan_phase(std::size_t phase, std::span<const PhaseLog> history) override {
        incorporate(history);
        ActiveSet set = compute_active_set(est_, phase, beta_);
        std::vector<StateIndex> explored;
        if (gate_) {
            explored = set.states;
        } else {
            for (StateIndex s = 0; s < env_.num_states; ++s) explored.push_back(s);
        }
        reach_.push_back(set.reach);
        active_.push_back(explored);

        PhasePlan plan;
        plan.counted_timestep = phase;
        if (explored.empty()) {
            // Nothing is reachable enough: agents idle and the whole layer is sink-routed.
            plan.policies.push_back(Policy::constant(env_.num_states, env_.num_actions, env_.horizon));
            plan.agents.assign(m_, AgentAssignment{0, std::nullopt});
            group_sizes_.emplace_back();
            return plan;
        }
        std::map<StateIndex, std::size_t> policy_id;
        for (StateIndex s : explored) {
            policy_id[s] = plan.policies.size();
            plan.policies.push_back(set.policies.at(s));
        }
        plan.agents.resize(m_);
        std::vector<std::size_t> sizes;
        for (const auto& [sa, members] : partition_agents(m_, explored, env_.num_actions)) {
            sizes.push_back(members.size());
            for (std::size_t j : members)
                plan.agents[j] = AgentAssignment{policy_id.at(sa.first), ForcedAction{phase, sa.first, sa.second}};
        }
        group_sizes_.push_back(std::move(sizes));
        return plan;
    }

    EstimatedDynamics finish(std::span<const PhaseLog> history) override {
        incorporate(history);
        return est_;
    }

    /// Explored states per phase (the active sets when gated).
    const std::vector<std::vector<StateIndex>>& explored_states() const noexcept { return active_; }
    /// Max reach probability of every state, per phase.
    const std::vector<std::map<StateIndex, double>>& reach_probabilities() const noexcept { return reach_; }
    /// Group sizes per phase, in (state, action) order.
    const std::vector<std::vector<std::size_t>>& group_sizes() const noexcept { return group_sizes_; }

private:
    void incorporate(std::span<const PhaseLog> history) {
        for (; incorporated_ < history.size(); ++incorporated_) {
            const std::size_t i = incorporated_;
            build_phase_estimate(history[i], active_.at(i), env_.num_states, env_.num_actions, i, min_count_)
                .apply(est_, active_.at(i));
        }
    }

    double beta_;
    bool gate_;
    std::uint64_t min_count_;
    EnvironmentSpec env_;
    std::size_t m_ = 0;
    EstimatedDynamics est_;
    std::size_t incorporated_ = 0;
    std::vector<std::vector<StateIndex>> active_;
    std::vector<std::map<StateIndex, double>> reach_;
    std::vector<std::vector<std::size_t>> group_sizes_;
};

} // namespace detail

/// MARFE as a protocol callback. Each agent of group (s, a) in phase i follows
/// the max-reach policy of s, plays a if it is in s at timestep i, and keeps
/// following the same policy afterwards.
class MarfeExplorer : public detail::LayerwiseExplorer {
public:
    explicit MarfeExplorer(double beta) : LayerwiseExplorer(beta, true, 1) {
        if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("MARFE: beta must lie in (0,1)");
    }
};

/// Standalone driver: H phases of m agents on `env`.
inline ProtocolResult run_marfe(Environment& env, const MarfeConfig& config) {
    config.validate();
    MarfeExplorer explorer(config.beta);
    return run_protocol(env, explorer, env.spec().horizon, config.m);
}

inline ProtocolResult run_marfe(const TabularMdp& mdp, const MarfeConfig& config) {
    Environment env(mdp, RngPlan(config.seed), config.threads);
    return run_marfe(env, config);
}

struct AgentBound {
    double m = 0.0;            ///< ceil of 89 S^5 H^6 A (ln(1/delta') + 2S) / eps^2
    double delta_prime = 0.0;  ///< delta / (S H A supp)
    double supp = 0.0;         ///< upper bound on m used inside delta'
};

/// Agent count sufficient for the H-phase guarantee. delta' depends on an
/// upper bound supp(m) of m itself; it is resolved by one fixed-point pass:
/// evaluate with supp = 1, then again with supp = that result.
inline AgentBound agent_bound(std::size_t S, std::size_t A, std::size_t H, double epsilon, double delta) {
    if (S == 0 || A == 0 || H == 0) throw ConfigError("agent bound: S, A, H must be >= 1");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("agent bound: epsilon must lie in (0,1)");
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("agent bound: delta must lie in (0,1)");
    const double s = static_cast<double>(S), a = static_cast<double>(A), h = static_cast<double>(H);
    auto evaluate = [&](double supp) {
        AgentBound b;
        b.supp = supp;
        b.delta_prime = delta / (s * h * a * supp);
        b.m = std::ceil(89.0 * std::pow(s, 5) * std::pow(h, 6) * a * (std::log(1.0 / b.delta_prime) + 2.0 * s) /
                        (epsilon * epsilon));
        return b;
    };
    return evaluate(evaluate(1.0).m);
}

} // namespace marfe
