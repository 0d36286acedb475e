#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace marfe {

using StateIndex = std::size_t;
using ActionIndex = std::size_t;

/// Tolerance on row sums and stochastic-policy rows.
inline constexpr double kRowTolerance = 1e-9;

/// Dense transition tensor P[h][s][a][s'] over an index space of `num_states`
/// states. When `sink_state()` is set, the last index is a virtual absorbing
/// sink that is not part of the environment's state space: occupancy reports
/// and rewards only cover the first `num_real_states()` indices.
class TransitionKernel {
public:
    TransitionKernel() = default;

    TransitionKernel(std::size_t num_states, std::size_t num_actions, std::size_t horizon,
                     StateIndex initial_state, std::optional<StateIndex> sink = std::nullopt)
        : states_(num_states), actions_(num_actions), horizon_(horizon), s0_(initial_state),
          sink_(sink), p_(horizon * num_states * num_actions * num_states, 0.0) {
        if (sink_ && *sink_ + 1 != states_) {
            throw DimensionError("sink state must be the last state index");
        }
    }

    /// S real states plus a sink at index S; every row starts one-hot at the sink.
    static TransitionKernel sink_augmented(std::size_t real_states, std::size_t num_actions,
                                           std::size_t horizon, StateIndex initial_state) {
        TransitionKernel k(real_states + 1, num_actions, horizon, initial_state, real_states);
        for (std::size_t h = 0; h < horizon; ++h) {
            for (StateIndex s = 0; s <= real_states; ++s) k.set_sink_row(h, s);
        }
        return k;
    }

    std::size_t num_states() const noexcept { return states_; }
    std::size_t num_real_states() const noexcept { return sink_ ? states_ - 1 : states_; }
    std::size_t num_actions() const noexcept { return actions_; }
    std::size_t horizon() const noexcept { return horizon_; }
    StateIndex initial_state() const noexcept { return s0_; }
    std::optional<StateIndex> sink_state() const noexcept { return sink_; }
    bool is_sink(StateIndex s) const noexcept { return sink_ && *sink_ == s; }

    double operator()(std::size_t h, StateIndex s, ActionIndex a, StateIndex next) const {
        return p_[offset(h, s, a) + next];
    }
    double& at(std::size_t h, StateIndex s, ActionIndex a, StateIndex next) {
        return p_[offset(h, s, a) + next];
    }

    std::span<const double> row(std::size_t h, StateIndex s, ActionIndex a) const {
        return {p_.data() + offset(h, s, a), states_};
    }
    std::span<double> row(std::size_t h, StateIndex s, ActionIndex a) {
        return {p_.data() + offset(h, s, a), states_};
    }

    /// Every action of (h, s) moves deterministically to the sink.
    void set_sink_row(std::size_t h, StateIndex s) {
        if (!sink_) throw DimensionError("kernel has no sink state");
        for (ActionIndex a = 0; a < actions_; ++a) {
            auto r = row(h, s, a);
            std::fill(r.begin(), r.end(), 0.0);
            r[*sink_] = 1.0;
        }
    }

    const std::vector<double>& data() const noexcept { return p_; }
    std::vector<double>& data() noexcept { return p_; }

    bool operator==(const TransitionKernel&) const = default;

private:
    std::size_t offset(std::size_t h, StateIndex s, ActionIndex a) const {
        return ((h * states_ + s) * actions_ + a) * states_;
    }

    std::size_t states_ = 0;
    std::size_t actions_ = 0;
    std::size_t horizon_ = 0;
    StateIndex s0_ = 0;
    std::optional<StateIndex> sink_;
    std::vector<double> p_;
};

/// The ground-truth environment: a kernel with no virtual sink.
class TabularMdp : public TransitionKernel {
public:
    TabularMdp() = default;
    TabularMdp(std::size_t num_states, std::size_t num_actions, std::size_t horizon,
               StateIndex initial_state)
        : TransitionKernel(num_states, num_actions, horizon, initial_state) {}

    bool operator==(const TabularMdp&) const = default;
};

/// Deterministic reward tensor r[h][s][a] with entries in [0,1].
class RewardFunction {
public:
    RewardFunction() = default;
    RewardFunction(std::size_t num_states, std::size_t num_actions, std::size_t horizon)
        : states_(num_states), actions_(num_actions), horizon_(horizon),
          r_(num_states * num_actions * horizon, 0.0) {}

    RewardFunction(std::size_t num_states, std::size_t num_actions, std::size_t horizon,
                   std::vector<double> values)
        : states_(num_states), actions_(num_actions), horizon_(horizon), r_(std::move(values)) {
        if (r_.size() != states_ * actions_ * horizon_) {
            throw DimensionError("reward tensor has " + std::to_string(r_.size()) +
                                 " entries, expected H*S*A");
        }
        for (double v : r_) {
            if (!(v >= 0.0 && v <= 1.0)) throw InvariantError("reward entry outside [0,1]");
        }
    }

    std::size_t num_states() const noexcept { return states_; }
    std::size_t num_actions() const noexcept { return actions_; }
    std::size_t horizon() const noexcept { return horizon_; }

    double operator()(std::size_t h, StateIndex s, ActionIndex a) const {
        return r_[(h * states_ + s) * actions_ + a];
    }
    void set(std::size_t h, StateIndex s, ActionIndex a, double v) {
        if (!(v >= 0.0 && v <= 1.0)) throw InvariantError("reward entry outside [0,1]");
        r_[(h * states_ + s) * actions_ + a] = v;
    }

    const std::vector<double>& data() const noexcept { return r_; }

    bool operator==(const RewardFunction&) const = default;

private:
    std::size_t states_ = 0;
    std::size_t actions_ = 0;
    std::size_t horizon_ = 0;
    std::vector<double> r_;
};

enum class PolicyKind { deterministic, stochastic };

/// Markovian policy over the real states of an environment. Deterministic
/// policies store one action per (h, s); stochastic ones a distribution over A.
class Policy {
public:
    Policy() = default;

    static Policy deterministic(std::size_t num_states, std::size_t num_actions, std::size_t horizon,
                                std::vector<ActionIndex> actions) {
        Policy p(PolicyKind::deterministic, num_states, num_actions, horizon);
        if (actions.size() != num_states * horizon) {
            throw DimensionError("deterministic policy needs H*S actions");
        }
        for (ActionIndex a : actions) {
            if (a >= num_actions) throw InvariantError("policy action index out of range");
        }
        p.actions_ = std::move(actions);
        return p;
    }

    static Policy stochastic(std::size_t num_states, std::size_t num_actions, std::size_t horizon,
                             std::vector<double> probs) {
        Policy p(PolicyKind::stochastic, num_states, num_actions, horizon);
        if (probs.size() != num_states * horizon * num_actions) {
            throw DimensionError("stochastic policy needs H*S*A probabilities");
        }
        for (std::size_t i = 0; i < num_states * horizon; ++i) {
            double sum = 0.0;
            for (std::size_t a = 0; a < num_actions; ++a) {
                double v = probs[i * num_actions + a];
                if (!(v >= 0.0 && v <= 1.0)) throw InvariantError("policy probability outside [0,1]");
                sum += v;
            }
            if (std::abs(sum - 1.0) > kRowTolerance) {
                throw InvariantError("stochastic policy row does not sum to 1");
            }
        }
        p.probs_ = std::move(probs);
        return p;
    }

    static Policy constant(std::size_t num_states, std::size_t num_actions, std::size_t horizon,
                           ActionIndex action = 0) {
        return deterministic(num_states, num_actions, horizon,
                             std::vector<ActionIndex>(num_states * horizon, action));
    }

    static Policy uniform(std::size_t num_states, std::size_t num_actions, std::size_t horizon) {
        return stochastic(num_states, num_actions, horizon,
                          std::vector<double>(num_states * horizon * num_actions,
                                              1.0 / static_cast<double>(num_actions)));
    }

    PolicyKind kind() const noexcept { return kind_; }
    bool is_deterministic() const noexcept { return kind_ == PolicyKind::deterministic; }
    std::size_t num_states() const noexcept { return states_; }
    std::size_t num_actions() const noexcept { return actions_count_; }
    std::size_t horizon() const noexcept { return horizon_; }

    /// Only valid for deterministic policies.
    ActionIndex action(std::size_t h, StateIndex s) const { return actions_[h * states_ + s]; }

    double prob(std::size_t h, StateIndex s, ActionIndex a) const {
        if (kind_ == PolicyKind::deterministic) return actions_[h * states_ + s] == a ? 1.0 : 0.0;
        return probs_[(h * states_ + s) * actions_count_ + a];
    }

    /// Inverse-CDF draw with a caller-supplied uniform u in [0,1).
    ActionIndex sample(std::size_t h, StateIndex s, double u) const {
        if (kind_ == PolicyKind::deterministic) return actions_[h * states_ + s];
        const double* row = probs_.data() + (h * states_ + s) * actions_count_;
        double acc = 0.0;
        for (ActionIndex a = 0; a + 1 < actions_count_; ++a) {
            acc += row[a];
            if (u < acc) return a;
        }
        // Mass lost to rounding lands on the last action with positive probability.
        for (ActionIndex a = actions_count_; a-- > 0;) {
            if (row[a] > 0.0) return a;
        }
        return actions_count_ - 1;
    }

    const std::vector<ActionIndex>& actions() const noexcept { return actions_; }
    const std::vector<double>& probabilities() const noexcept { return probs_; }

    bool operator==(const Policy&) const = default;

private:
    Policy(PolicyKind kind, std::size_t s, std::size_t a, std::size_t h)
        : kind_(kind), states_(s), actions_count_(a), horizon_(h) {}

    PolicyKind kind_ = PolicyKind::deterministic;
    std::size_t states_ = 0;
    std::size_t actions_count_ = 0;
    std::size_t horizon_ = 0;
    std::vector<ActionIndex> actions_;
    std::vector<double> probs_;
};

/// One episode: s_0..s_H and a_0..a_{H-1}. Rewards are never recorded.
struct Trajectory {
    std::vector<StateIndex> states;
    std::vector<ActionIndex> actions;

    bool operator==(const Trajectory&) const = default;
};

/// One failed check. `h`, `s`, `a` are set when the check is row-local.
struct Violation {
    std::optional<std::size_t> h;
    std::optional<StateIndex> s;
    std::optional<ActionIndex> a;
    std::string check;

    std::string to_string() const {
        std::ostringstream os;
        if (h) os << "(h=" << *h << ", s=" << *s << ", a=" << *a << ") ";
        os << check;
        return os.str();
    }
};

inline std::vector<Violation> validate_kernel(const TransitionKernel& k) {
    std::vector<Violation> out;
    if (k.num_states() == 0) out.push_back({{}, {}, {}, "num_states must be positive"});
    if (k.num_actions() == 0) out.push_back({{}, {}, {}, "num_actions must be positive"});
    if (k.horizon() == 0) out.push_back({{}, {}, {}, "horizon must be positive"});
    if (k.initial_state() >= k.num_real_states()) {
        out.push_back({{}, {}, {}, "initial state " + std::to_string(k.initial_state()) +
                                       " outside [0," + std::to_string(k.num_real_states()) + ")"});
    }
    if (!out.empty()) return out;
    if (k.data().size() != k.horizon() * k.num_states() * k.num_actions() * k.num_states()) {
        out.push_back({{}, {}, {}, "transition tensor size does not match H*S*A*S"});
        return out;
    }
    for (std::size_t h = 0; h < k.horizon(); ++h) {
        for (StateIndex s = 0; s < k.num_states(); ++s) {
            for (ActionIndex a = 0; a < k.num_actions(); ++a) {
                double sum = 0.0;
                bool range_ok = true;
                for (double v : k.row(h, s, a)) {
                    if (!(v >= 0.0 && v <= 1.0)) range_ok = false;
                    sum += v;
                }
                if (!range_ok) out.push_back({h, s, a, "probability outside [0,1]"});
                if (!(std::abs(sum - 1.0) <= kRowTolerance)) {
                    std::ostringstream os;
                    os.precision(17);
                    os << "row sums to " << sum << ", expected 1";
                    out.push_back({h, s, a, os.str()});
                }
                if (k.is_sink(s) && k(h, s, a, s) != 1.0) {
                    out.push_back({h, s, a, "sink row is not absorbing"});
                }
            }
        }
    }
    return out;
}

/// Empty iff every type invariant of a TabularMdp holds.
inline std::vector<Violation> validate_mdp(const TabularMdp& mdp) { return validate_kernel(mdp); }

inline void require_valid(const TabularMdp& mdp) {
    auto v = validate_mdp(mdp);
    if (v.empty()) return;
    std::string msg = "invalid MDP (" + std::to_string(v.size()) + " violations): " + v.front().to_string();
    throw InvariantError(msg);
}

/// Each row drawn from a symmetric Dirichlet(concentration). Deterministic in `seed`.
inline TabularMdp random_mdp(std::size_t S, std::size_t A, std::size_t H, std::uint64_t seed,
                             double concentration = 1.0, StateIndex initial_state = 0) {
    if (S == 0 || A == 0 || H == 0) throw ConfigError("random_mdp: S, A and H must be >= 1");
    if (!(concentration > 0.0)) throw ConfigError("random_mdp: concentration must be positive");
    if (initial_state >= S) throw ConfigError("random_mdp: initial state out of range");
    TabularMdp mdp(S, A, H, initial_state);
    SplitMix64 rng(seed);
    std::gamma_distribution<double> gamma(concentration, 1.0);
    for (std::size_t h = 0; h < H; ++h) {
        for (StateIndex s = 0; s < S; ++s) {
            for (ActionIndex a = 0; a < A; ++a) {
                auto row = mdp.row(h, s, a);
                double sum = 0.0;
                for (auto& v : row) sum += (v = gamma(rng));
                if (sum > 0.0) {
                    for (auto& v : row) v /= sum;
                } else {
                    // Every draw underflowed (tiny concentration): a uniformly chosen vertex.
                    row[static_cast<std::size_t>(rng() % S)] = 1.0;
                }
            }
        }
    }
    return mdp;
}

/// Every row one-hot at a uniformly drawn next state.
inline TabularMdp random_deterministic_mdp(std::size_t S, std::size_t A, std::size_t H,
                                           std::uint64_t seed, StateIndex initial_state = 0) {
    if (S == 0 || A == 0 || H == 0) throw ConfigError("random_deterministic_mdp: S, A and H must be >= 1");
    TabularMdp mdp(S, A, H, initial_state);
    SplitMix64 rng(seed);
    for (std::size_t h = 0; h < H; ++h)
        for (StateIndex s = 0; s < S; ++s)
            for (ActionIndex a = 0; a < A; ++a) mdp.at(h, s, a, rng() % S) = 1.0;
    return mdp;
}

/// Every row a self-loop.
inline TabularMdp identity_mdp(std::size_t S, std::size_t A, std::size_t H, StateIndex initial_state = 0) {
    TabularMdp mdp(S, A, H, initial_state);
    for (std::size_t h = 0; h < H; ++h)
        for (StateIndex s = 0; s < S; ++s)
            for (ActionIndex a = 0; a < A; ++a) mdp.at(h, s, a, s) = 1.0;
    return mdp;
}

inline Policy random_deterministic_policy(std::size_t S, std::size_t A, std::size_t H, SplitMix64& rng) {
    std::vector<ActionIndex> acts(S * H);
    for (auto& a : acts) a = static_cast<ActionIndex>(rng() % A);
    return Policy::deterministic(S, A, H, std::move(acts));
}

inline Policy random_stochastic_policy(std::size_t S, std::size_t A, std::size_t H, SplitMix64& rng) {
    std::vector<double> probs(S * H * A);
    for (std::size_t i = 0; i < S * H; ++i) {
        double sum = 0.0;
        for (std::size_t a = 0; a < A; ++a) sum += (probs[i * A + a] = rng.uniform() + 1e-3);
        for (std::size_t a = 0; a < A; ++a) probs[i * A + a] /= sum;
    }
    return Policy::stochastic(S, A, H, std::move(probs));
}

/// Rewards i.i.d. uniform on [0,1].
inline RewardFunction random_reward(std::size_t S, std::size_t A, std::size_t H, SplitMix64& rng) {
    std::vector<double> r(S * A * H);
    for (auto& v : r) v = rng.uniform();
    return RewardFunction(S, A, H, std::move(r));
}

} // namespace marfe
