#pragma once

// Cooperative multi-agent protocol: in each phase every agent runs one episode
// of its assigned policy against the true MDP with its own random stream. The
// exploration algorithm only ever sees an EnvironmentSpec and PhaseLogs.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "errors.hpp"
#include "estimate.hpp"
#include "mdp.hpp"
#include "rng.hpp"

namespace marfe {

/// What a learner may know about the environment.
struct EnvironmentSpec {
    std::size_t num_states = 0;
    std::size_t num_actions = 0;
    std::size_t horizon = 0;
    StateIndex initial_state = 0;

    bool operator==(const EnvironmentSpec&) const = default;
};

/// Overrides the policy's action when the agent is in `state` at `timestep`.
struct ForcedAction {
    std::size_t timestep = 0;
    StateIndex state = 0;
    ActionIndex action = 0;

    bool operator==(const ForcedAction&) const = default;
};

struct AgentAssignment {
    std::size_t policy_id = 0;
    std::optional<ForcedAction> forced;

    bool operator==(const AgentAssignment&) const = default;
};

/// Assignments for one phase. `policies` is indexed by AgentAssignment::policy_id.
struct PhasePlan {
    std::vector<Policy> policies;
    std::vector<AgentAssignment> agents;
    /// Timestep whose transitions are counted; nullopt counts every timestep.
    std::optional<std::size_t> counted_timestep;
};

/// Record of one executed phase. Trajectories are stored flat: agent j's
/// states occupy [j*(H+1), (j+1)*(H+1)) and its actions [j*H, (j+1)*H).
class PhaseLog {
public:
    std::size_t phase_index = 0;
    std::size_t horizon = 0;
    std::vector<AgentAssignment> assignments;
    std::optional<std::size_t> counted_timestep;
    std::vector<std::uint32_t> states;
    std::vector<std::uint32_t> actions;
    TransitionCounts counts;

    std::size_t num_agents() const noexcept { return assignments.size(); }

    StateIndex state(std::size_t agent, std::size_t h) const { return states[agent * (horizon + 1) + h]; }
    ActionIndex action(std::size_t agent, std::size_t h) const { return actions[agent * horizon + h]; }

    Trajectory trajectory(std::size_t agent) const {
        Trajectory t;
        t.states.assign(states.begin() + static_cast<std::ptrdiff_t>(agent * (horizon + 1)),
                        states.begin() + static_cast<std::ptrdiff_t>((agent + 1) * (horizon + 1)));
        t.actions.assign(actions.begin() + static_cast<std::ptrdiff_t>(agent * horizon),
                         actions.begin() + static_cast<std::ptrdiff_t>((agent + 1) * horizon));
        return t;
    }

    /// Counts recomputed from the stored trajectories.
    TransitionCounts recount() const {
        TransitionCounts c;
        for (std::size_t j = 0; j < num_agents(); ++j)
            for (std::size_t h = 0; h < horizon; ++h)
                if (!counted_timestep || *counted_timestep == h)
                    ++c[{h, state(j, h), action(j, h), state(j, h + 1)}];
        return c;
    }

    bool operator==(const PhaseLog&) const = default;
};

namespace detail {

inline StateIndex sample_next(std::span<const double> row, double u) {
    double acc = 0.0;
    for (StateIndex t = 0; t + 1 < row.size(); ++t) {
        acc += row[t];
        if (u < acc) return t;
    }
    for (StateIndex t = row.size(); t-- > 0;) {
        if (row[t] > 0.0) return t;
    }
    return row.size() - 1;
}

inline void check_plan(const TabularMdp& mdp, const PhasePlan& plan) {
    if (plan.agents.empty()) throw ConfigError("phase plan assigns no agents");
    for (const auto& pi : plan.policies) {
        if (pi.num_states() != mdp.num_states() || pi.num_actions() != mdp.num_actions() ||
            pi.horizon() != mdp.horizon()) {
            throw DimensionError("assigned policy shape does not match the environment");
        }
    }
    for (const auto& ag : plan.agents) {
        if (ag.policy_id >= plan.policies.size()) throw ConfigError("assignment names an unknown policy id");
        if (ag.forced && (ag.forced->timestep >= mdp.horizon() || ag.forced->state >= mdp.num_states() ||
                          ag.forced->action >= mdp.num_actions())) {
            throw DimensionError("forced action out of range");
        }
    }
    if (plan.counted_timestep && *plan.counted_timestep >= mdp.horizon()) {
        throw DimensionError("counted timestep out of range");
    }
}

} // namespace detail

/// Runs one phase. Each agent draws two uniforms per step from its own stream
/// (action, then next state) whatever its policy, so the action draws of an
/// agent do not depend on the dynamics it faces. Output depends only on
/// (mdp, plan, rng, phase_index), never on `threads`.
inline PhaseLog run_phase(const TabularMdp& mdp, const PhasePlan& plan, const RngPlan& rng,
                          std::size_t phase_index, unsigned threads = 1) {
    detail::check_plan(mdp, plan);
    const std::size_t m = plan.agents.size();
    const std::size_t H = mdp.horizon();
    PhaseLog log;
    log.phase_index = phase_index;
    log.horizon = H;
    log.assignments = plan.agents;
    log.counted_timestep = plan.counted_timestep;
    log.states.resize(m * (H + 1));
    log.actions.resize(m * H);

    auto run_agents = [&](std::size_t begin, std::size_t end) {
        for (std::size_t j = begin; j < end; ++j) {
            const AgentAssignment& ag = plan.agents[j];
            const Policy& pi = plan.policies[ag.policy_id];
            SplitMix64 stream = rng.stream(phase_index, j);
            StateIndex s = mdp.initial_state();
            std::uint32_t* st = log.states.data() + j * (H + 1);
            std::uint32_t* ac = log.actions.data() + j * H;
            st[0] = static_cast<std::uint32_t>(s);
            for (std::size_t h = 0; h < H; ++h) {
                ActionIndex a = pi.sample(h, s, stream.uniform());
                if (ag.forced && ag.forced->timestep == h && ag.forced->state == s) a = ag.forced->action;
                s = detail::sample_next(mdp.row(h, s, a), stream.uniform());
                ac[h] = static_cast<std::uint32_t>(a);
                st[h + 1] = static_cast<std::uint32_t>(s);
            }
        }
    };

    const std::size_t workers = std::clamp<std::size_t>(threads == 0 ? 1 : threads, 1, m);
    if (workers == 1) {
        run_agents(0, m);
    } else {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (m + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t b = w * chunk, e = std::min(m, b + chunk);
            if (b < e) pool.emplace_back(run_agents, b, e);
        }
    }

    // Dense tally first; the sparse map is built once per phase.
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    const std::size_t h_lo = plan.counted_timestep.value_or(0);
    const std::size_t h_hi = plan.counted_timestep ? h_lo + 1 : H;
    std::vector<std::uint64_t> dense((h_hi - h_lo) * S * A * S, 0);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t h = h_lo; h < h_hi; ++h)
            ++dense[(((h - h_lo) * S + log.state(j, h)) * A + log.action(j, h)) * S + log.state(j, h + 1)];
    std::size_t i = 0;
    for (std::size_t h = h_lo; h < h_hi; ++h)
        for (StateIndex s = 0; s < S; ++s)
            for (ActionIndex a = 0; a < A; ++a)
                for (StateIndex t = 0; t < S; ++t, ++i)
                    if (dense[i] != 0) log.counts.emplace_hint(log.counts.end(), TransitionKey{h, s, a, t}, dense[i]);
    return log;
}

/// Handle on the true environment. Learners receive only `spec()`.
class Environment {
public:
    Environment(TabularMdp mdp, RngPlan rng, unsigned threads = 1)
        : mdp_(std::move(mdp)), rng_(rng), threads_(threads) {
        require_valid(mdp_);
    }

    EnvironmentSpec spec() const {
        return {mdp_.num_states(), mdp_.num_actions(), mdp_.horizon(), mdp_.initial_state()};
    }

    PhaseLog run_phase(const PhasePlan& plan, std::size_t phase_index) {
        PhaseLog log = marfe::run_phase(mdp_, plan, rng_, phase_index, threads_);
        ++phases_run_;
        return log;
    }

    std::size_t phases_run() const noexcept { return phases_run_; }
    const RngPlan& rng() const noexcept { return rng_; }
    unsigned threads() const noexcept { return threads_; }
    const TabularMdp& mdp() const noexcept { return mdp_; }

private:
    TabularMdp mdp_;
    RngPlan rng_;
    unsigned threads_ = 1;
    std::size_t phases_run_ = 0;
};

/// A reward-free exploration algorithm driven by run_protocol.
class Explorer {
public:
    virtual ~Explorer() = default;

    /// Called once before the first phase.
    virtual void begin(const EnvironmentSpec& env, std::size_t phases, std::size_t agents) = 0;
    /// Assignments for `phase`, given the logs of all earlier phases.
    virtual PhasePlan plan_phase(std::size_t phase, std::span<const PhaseLog> history) = 0;
    /// Final estimate from all phase logs.
    virtual EstimatedDynamics finish(std::span<const PhaseLog> history) = 0;
};

struct ProtocolResult {
    EstimatedDynamics estimate;
    std::vector<PhaseLog> phases;
};

inline ProtocolResult run_protocol(Environment& env, Explorer& explorer, std::size_t phases,
                                   std::size_t agents) {
    if (phases == 0) throw ConfigError("protocol needs at least one phase");
    if (agents == 0) throw ConfigError("protocol needs at least one agent");
    explorer.begin(env.spec(), phases, agents);
    ProtocolResult result;
    result.phases.reserve(phases);
    for (std::size_t i = 0; i < phases; ++i) {
        PhasePlan plan = explorer.plan_phase(i, result.phases);
        if (plan.agents.size() > agents) {
            throw ConfigError("explorer requested " + std::to_string(plan.agents.size()) + " agents in phase " +
                              std::to_string(i) + " but only " + std::to_string(agents) + " are available");
        }
        result.phases.push_back(env.run_phase(plan, i));
    }
    result.estimate = explorer.finish(result.phases);
    return result;
}

} // namespace marfe
