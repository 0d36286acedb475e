#pragma once

// Exact finite-horizon dynamic programming over a TransitionKernel. Every
// routine accepts sink-augmented kernels: the sink index takes action 0 under
// any policy and earns zero reward, so policies and rewards are only ever
// defined over the real states.

#include <cstddef>
#include <vector>

#include "errors.hpp"
#include "mdp.hpp"

namespace marfe {

/// Dense square matrix, row-major.
struct StateMatrix {
    std::size_t size = 0;
    std::vector<double> values;

    explicit StateMatrix(std::size_t n = 0) : size(n), values(n * n, 0.0) {}

    double operator()(std::size_t i, std::size_t j) const { return values[i * size + j]; }
    double& operator()(std::size_t i, std::size_t j) { return values[i * size + j]; }
};

/// q[h][s] for h in [0,H], s over the real states (sink mass excluded), and
/// the policy-weighted q[h][s][a] for h in [0,H).
class OccupancyTable {
public:
    OccupancyTable() = default;
    OccupancyTable(std::size_t horizon, std::size_t num_states, std::size_t num_actions)
        : horizon_(horizon), states_(num_states), actions_(num_actions),
          q_((horizon + 1) * num_states, 0.0), qsa_(horizon * num_states * num_actions, 0.0) {}

    std::size_t horizon() const noexcept { return horizon_; }
    std::size_t num_states() const noexcept { return states_; }
    std::size_t num_actions() const noexcept { return actions_; }

    double operator()(std::size_t h, StateIndex s) const { return q_[h * states_ + s]; }
    double& at(std::size_t h, StateIndex s) { return q_[h * states_ + s]; }

    double state_action(std::size_t h, StateIndex s, ActionIndex a) const {
        return qsa_[(h * states_ + s) * actions_ + a];
    }
    double& state_action_at(std::size_t h, StateIndex s, ActionIndex a) {
        return qsa_[(h * states_ + s) * actions_ + a];
    }

    std::vector<double> step(std::size_t h) const {
        return {q_.begin() + static_cast<std::ptrdiff_t>(h * states_),
                q_.begin() + static_cast<std::ptrdiff_t>((h + 1) * states_)};
    }

    double mass(std::size_t h) const {
        double m = 0.0;
        for (StateIndex s = 0; s < states_; ++s) m += (*this)(h, s);
        return m;
    }

private:
    std::size_t horizon_ = 0;
    std::size_t states_ = 0;
    std::size_t actions_ = 0;
    std::vector<double> q_;
    std::vector<double> qsa_;
};

struct ValueResult {
    double value = 0.0;
    Policy policy;
};

namespace detail {

inline double policy_prob(const TransitionKernel& k, const Policy& pi, std::size_t h, StateIndex s,
                          ActionIndex a) {
    if (k.is_sink(s)) return a == 0 ? 1.0 : 0.0;
    return pi.prob(h, s, a);
}

inline void check_policy(const TransitionKernel& k, const Policy& pi) {
    if (pi.num_states() != k.num_real_states() || pi.num_actions() != k.num_actions() ||
        pi.horizon() != k.horizon()) {
        throw DimensionError("policy shape (S=" + std::to_string(pi.num_states()) +
                             ", A=" + std::to_string(pi.num_actions()) +
                             ", H=" + std::to_string(pi.horizon()) + ") does not match dynamics (S=" +
                             std::to_string(k.num_real_states()) + ", A=" + std::to_string(k.num_actions()) +
                             ", H=" + std::to_string(k.horizon()) + ")");
    }
}

inline void check_reward(const TransitionKernel& k, const RewardFunction& r) {
    if (r.num_states() != k.num_real_states() || r.num_actions() != k.num_actions() ||
        r.horizon() != k.horizon()) {
        throw DimensionError("reward shape does not match dynamics");
    }
}

inline double reward_at(const TransitionKernel& k, const RewardFunction& r, std::size_t h, StateIndex s,
                        ActionIndex a) {
    return k.is_sink(s) ? 0.0 : r(h, s, a);
}

} // namespace detail

/// M[s][s'] = sum_a P_h(s'|s,a) pi_h(a|s), over the full index space (sink included).
inline StateMatrix transition_matrix(const TransitionKernel& k, std::size_t h, const Policy& pi) {
    detail::check_policy(k, pi);
    if (h >= k.horizon()) throw DimensionError("timestep out of range");
    const std::size_t n = k.num_states();
    StateMatrix m(n);
    for (StateIndex s = 0; s < n; ++s) {
        for (ActionIndex a = 0; a < k.num_actions(); ++a) {
            const double w = detail::policy_prob(k, pi, h, s, a);
            if (w == 0.0) continue;
            auto row = k.row(h, s, a);
            for (StateIndex t = 0; t < n; ++t) m(s, t) += w * row[t];
        }
    }
    return m;
}

/// Full forward distribution over the index space (sink included), q[h][s], h in [0,H].
inline std::vector<std::vector<double>> state_distribution(const Policy& pi, const TransitionKernel& k) {
    detail::check_policy(k, pi);
    const std::size_t n = k.num_states();
    std::vector<std::vector<double>> dist(k.horizon() + 1, std::vector<double>(n, 0.0));
    dist[0][k.initial_state()] = 1.0;
    for (std::size_t h = 0; h < k.horizon(); ++h) {
        const StateMatrix m = transition_matrix(k, h, pi);
        for (StateIndex s = 0; s < n; ++s) {
            const double q = dist[h][s];
            if (q == 0.0) continue;
            for (StateIndex t = 0; t < n; ++t) dist[h + 1][t] += q * m(s, t);
        }
    }
    return dist;
}

inline OccupancyTable occupancy(const Policy& pi, const TransitionKernel& k) {
    const auto dist = state_distribution(pi, k);
    const std::size_t S = k.num_real_states();
    OccupancyTable table(k.horizon(), S, k.num_actions());
    for (std::size_t h = 0; h <= k.horizon(); ++h) {
        for (StateIndex s = 0; s < S; ++s) {
            table.at(h, s) = dist[h][s];
            if (h == k.horizon()) continue;
            for (ActionIndex a = 0; a < k.num_actions(); ++a) {
                table.state_action_at(h, s, a) = dist[h][s] * pi.prob(h, s, a);
            }
        }
    }
    return table;
}

inline double policy_value(const Policy& pi, const TransitionKernel& k, const RewardFunction& r) {
    detail::check_reward(k, r);
    const OccupancyTable q = occupancy(pi, k);
    double v = 0.0;
    for (std::size_t h = 0; h < k.horizon(); ++h)
        for (StateIndex s = 0; s < q.num_states(); ++s)
            for (ActionIndex a = 0; a < k.num_actions(); ++a) v += q.state_action(h, s, a) * r(h, s, a);
    return v;
}

/// Backward induction. Ties go to the lowest action index.
inline ValueResult optimal_policy(const TransitionKernel& k, const RewardFunction& r) {
    detail::check_reward(k, r);
    const std::size_t n = k.num_states();
    const std::size_t S = k.num_real_states();
    const std::size_t A = k.num_actions();
    std::vector<double> next(n, 0.0), cur(n, 0.0);
    std::vector<ActionIndex> actions(S * k.horizon(), 0);
    for (std::size_t h = k.horizon(); h-- > 0;) {
        for (StateIndex s = 0; s < n; ++s) {
            double best = 0.0;
            ActionIndex best_a = 0;
            for (ActionIndex a = 0; a < A; ++a) {
                double qv = detail::reward_at(k, r, h, s, a);
                auto row = k.row(h, s, a);
                for (StateIndex t = 0; t < n; ++t) qv += row[t] * next[t];
                if (a == 0 || qv > best) {
                    best = qv;
                    best_a = a;
                }
            }
            cur[s] = best;
            if (s < S) actions[h * S + s] = best_a;
        }
        std::swap(cur, next);
    }
    return {next[k.initial_state()], Policy::deterministic(S, A, k.horizon(), std::move(actions))};
}

/// Policy maximizing q_h(target | pi, k). Steps at and after `h` play action 0.
inline ValueResult max_reach_policy(const TransitionKernel& k, std::size_t h, StateIndex target) {
    if (h >= k.horizon()) throw ConfigError("max_reach_policy: target step out of range");
    if (target >= k.num_states()) throw ConfigError("max_reach_policy: target state out of range");
    if (k.is_sink(target)) throw ConfigError("max_reach_policy: target is the sink state");
    const std::size_t n = k.num_states();
    const std::size_t S = k.num_real_states();
    const std::size_t A = k.num_actions();
    std::vector<double> next(n, 0.0), cur(n, 0.0);
    next[target] = 1.0;
    std::vector<ActionIndex> actions(S * k.horizon(), 0);
    for (std::size_t step = h; step-- > 0;) {
        for (StateIndex s = 0; s < n; ++s) {
            double best = 0.0;
            ActionIndex best_a = 0;
            for (ActionIndex a = 0; a < A; ++a) {
                double qv = 0.0;
                auto row = k.row(step, s, a);
                for (StateIndex t = 0; t < n; ++t) qv += row[t] * next[t];
                if (a == 0 || qv > best) {
                    best = qv;
                    best_a = a;
                }
            }
            cur[s] = best;
            if (s < S) actions[step * S + s] = best_a;
        }
        std::swap(cur, next);
    }
    return {next[k.initial_state()], Policy::deterministic(S, A, k.horizon(), std::move(actions))};
}

/// reachable[h][s]: some action sequence reaches real state s at step h with positive probability.
inline std::vector<std::vector<bool>> reachable_states(const TransitionKernel& k) {
    const std::size_t S = k.num_real_states();
    std::vector<std::vector<bool>> reach(k.horizon() + 1, std::vector<bool>(S, false));
    reach[0][k.initial_state()] = true;
    for (std::size_t h = 0; h < k.horizon(); ++h)
        for (StateIndex s = 0; s < S; ++s) {
            if (!reach[h][s]) continue;
            for (ActionIndex a = 0; a < k.num_actions(); ++a)
                for (StateIndex t = 0; t < S; ++t)
                    if (k(h, s, a, t) > 0.0) reach[h + 1][t] = true;
        }
    return reach;
}

} // namespace marfe
