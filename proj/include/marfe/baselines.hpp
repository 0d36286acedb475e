#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "algorithm.hpp"
#include "errors.hpp"
#include "estimate.hpp"
#include "simulator.hpp"

namespace marfe {

/// Threshold construction: same max-reach routing as MARFE but every state
/// gets a group and a row is kept only with at least `count_threshold` visits.
struct NaiveConfig {
    std::size_t m = 0;
    std::uint64_t count_threshold = 1;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    void validate() const {
        if (m < 1) throw ConfigError("NaiveConfig: m must be >= 1");
        if (count_threshold < 1) throw ConfigError("NaiveConfig: count_threshold must be >= 1");
    }
};

class NaiveExplorer : public detail::LayerwiseExplorer {
public:
    explicit NaiveExplorer(std::uint64_t count_threshold)
        // beta only feeds the recorded reach probabilities; without gating it never filters.
        : LayerwiseExplorer(0.0, false, count_threshold) {
        if (count_threshold < 1) throw ConfigError("naive explorer: count_threshold must be >= 1");
    }
};

inline ProtocolResult run_naive(Environment& env, const NaiveConfig& config) {
    config.validate();
    NaiveExplorer explorer(config.count_threshold);
    return run_protocol(env, explorer, env.spec().horizon, config.m);
}

inline ProtocolResult run_naive(const TabularMdp& mdp, const NaiveConfig& config) {
    Environment env(mdp, RngPlan(config.seed), config.threads);
    return run_naive(env, config);
}

/// Every agent plays uniformly random actions in every phase. The estimate
/// pools all observed transitions; unvisited (h, s, a) go to the sink and a
/// state is active at h iff it was visited there.
class UniformExplorer : public Explorer {
public:
    void begin(const EnvironmentSpec& env, std::size_t, std::size_t agents) override {
        env_ = env;
        m_ = agents;
    }

    PhasePlan plan_phase(std::size_t, std::span<const PhaseLog>) override {
        PhasePlan plan;
        plan.policies.push_back(Policy::uniform(env_.num_states, env_.num_actions, env_.horizon));
        plan.agents.assign(m_, AgentAssignment{0, std::nullopt});
        return plan;
    }

    EstimatedDynamics finish(std::span<const PhaseLog> history) override {
        return pooled_estimate(env_, history);
    }

    static EstimatedDynamics pooled_estimate(const EnvironmentSpec& env, std::span<const PhaseLog> history) {
        const std::size_t S = env.num_states, A = env.num_actions;
        EstimatedDynamics est(S, A, env.horizon, env.initial_state);
        for (const auto& log : history)
            for (const auto& [k, v] : log.counts) est.counts[k] += v;
        std::vector<std::uint64_t> totals(env.horizon * S * A, 0);
        for (const auto& [k, v] : est.counts) totals[(k.h * S + k.s) * A + k.a] += v;
        for (std::size_t h = 0; h < env.horizon; ++h) {
            for (StateIndex s = 0; s < S; ++s) {
                bool visited = false;
                for (ActionIndex a = 0; a < A; ++a) visited = visited || totals[(h * S + s) * A + a] > 0;
                if (visited) est.active_sets[h].push_back(s);
            }
        }
        for (const auto& [k, v] : est.counts) {
            auto row = est.row(k.h, k.s, k.a);
            row[S] = 0.0;
            row[k.next] = static_cast<double>(v) / static_cast<double>(totals[(k.h * S + k.s) * A + k.a]);
        }
        return est;
    }

private:
    EnvironmentSpec env_;
    std::size_t m_ = 0;
};

inline ProtocolResult run_uniform(Environment& env, std::size_t m, std::size_t phases) {
    if (m < 1 || phases < 1) throw ConfigError("run_uniform: m and rho must be >= 1");
    UniformExplorer explorer;
    return run_protocol(env, explorer, phases, m);
}

inline ProtocolResult run_uniform(const TabularMdp& mdp, std::size_t m, std::size_t phases, std::uint64_t seed,
                                  unsigned threads = 1) {
    Environment env(mdp, RngPlan(seed), threads);
    return run_uniform(env, m, phases);
}

} // namespace marfe
