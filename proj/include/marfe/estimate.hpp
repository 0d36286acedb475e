#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mdp.hpp"

namespace marfe {

/// (h, s, a, s') index of an observed transition.
struct TransitionKey {
    std::size_t h = 0;
    StateIndex s = 0;
    ActionIndex a = 0;
    StateIndex next = 0;

    auto operator<=>(const TransitionKey&) const = default;
};

using TransitionCounts = std::map<TransitionKey, std::uint64_t>;

/// Active (h, s, a) that no agent visited; its row was routed to the sink.
struct ZeroVisitWarning {
    std::size_t h = 0;
    StateIndex s = 0;
    ActionIndex a = 0;

    bool operator==(const ZeroVisitWarning&) const = default;
};

/// Sink-augmented estimate of the dynamics: real states 0..S-1, sink at S.
/// Rows of states outside the per-step active set are one-hot at the sink.
class EstimatedDynamics : public TransitionKernel {
public:
    EstimatedDynamics() = default;
    EstimatedDynamics(std::size_t real_states, std::size_t num_actions, std::size_t horizon,
                      StateIndex initial_state, double beta = 0.0)
        : TransitionKernel(TransitionKernel::sink_augmented(real_states, num_actions, horizon, initial_state)),
          beta(beta), active_sets(horizon) {}

    double beta = 0.0;
    /// Sorted active (retained) states per timestep.
    std::vector<std::vector<StateIndex>> active_sets;
    /// Counts used to build each estimated row.
    TransitionCounts counts;
    std::vector<ZeroVisitWarning> warnings;

    bool is_active(std::size_t h, StateIndex s) const {
        const auto& set = active_sets.at(h);
        return std::binary_search(set.begin(), set.end(), s);
    }

    std::uint64_t visits(std::size_t h, StateIndex s, ActionIndex a) const {
        std::uint64_t n = 0;
        for (auto it = counts.lower_bound({h, s, a, 0}); it != counts.end(); ++it) {
            if (it->first.h != h || it->first.s != s || it->first.a != a) break;
            n += it->second;
        }
        return n;
    }

    bool operator==(const EstimatedDynamics&) const = default;
};

/// Structural invariants of an estimate: stochastic rows, an absorbing sink,
/// and sink rows for every state outside the active set.
inline std::vector<Violation> validate_estimate(const EstimatedDynamics& est) {
    std::vector<Violation> out = validate_kernel(est);
    if (!out.empty() && !out.front().h) return out;
    if (!est.sink_state() || *est.sink_state() != est.num_real_states()) {
        out.push_back({{}, {}, {}, "estimate must be sink-augmented"});
        return out;
    }
    if (est.active_sets.size() != est.horizon()) {
        out.push_back({{}, {}, {}, "active_sets must have one entry per timestep"});
        return out;
    }
    const std::size_t S = est.num_real_states();
    for (std::size_t h = 0; h < est.horizon(); ++h)
        for (StateIndex s = 0; s < S; ++s)
            if (!est.is_active(h, s))
                for (ActionIndex a = 0; a < est.num_actions(); ++a)
                    if (est(h, s, a, S) != 1.0) out.push_back({h, s, a, "inactive state without a sink row"});
    return out;
}

/// Rows of active (h,s,a) with visits are exactly N(s,a,s')/N(s,a); active
/// rows without visits are one-hot at the sink.
inline std::vector<Violation> check_empirical_rows(const EstimatedDynamics& est) {
    std::vector<Violation> out;
    const std::size_t S = est.num_real_states();
    for (std::size_t h = 0; h < est.horizon(); ++h) {
        for (StateIndex s : est.active_sets.at(h)) {
            for (ActionIndex a = 0; a < est.num_actions(); ++a) {
                const std::uint64_t n = est.visits(h, s, a);
                if (n == 0) {
                    if (est(h, s, a, S) != 1.0) out.push_back({h, s, a, "unvisited active row is not a sink row"});
                    continue;
                }
                for (StateIndex t = 0; t <= S; ++t) {
                    auto it = est.counts.find({h, s, a, t});
                    const double expect =
                        static_cast<double>(it == est.counts.end() ? 0 : it->second) / static_cast<double>(n);
                    if (est(h, s, a, t) != expect) {
                        out.push_back({h, s, a, "row is not the empirical mean of its counts"});
                        break;
                    }
                }
            }
        }
    }
    return out;
}

} // namespace marfe
