#pragma once

// Key dynamics: a two-state lock. From the informative state (index 0) only
// the key action a*_h keeps the agent there; every other action drops it into
// an absorbing state (index 1). Used to measure how many agents survive to
// each timestep and how often a phase budget suffices to learn the key.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "baselines.hpp"
#include "errors.hpp"
#include "estimate.hpp"
#include "planning.hpp"
#include "simulator.hpp"

namespace marfe {

inline constexpr StateIndex kKeyState = 0;
inline constexpr StateIndex kLockedState = 1;

struct KeyInstance {
    std::vector<ActionIndex> key;
    TabularMdp mdp;
};

inline KeyInstance make_key_dynamics(std::size_t H, std::size_t A, std::vector<ActionIndex> key) {
    if (H == 0 || A == 0) throw ConfigError("key dynamics: H and A must be >= 1");
    if (key.size() != H) {
        throw ConfigError("key length " + std::to_string(key.size()) + " does not match H=" + std::to_string(H));
    }
    TabularMdp mdp(2, A, H, kKeyState);
    for (std::size_t h = 0; h < H; ++h) {
        if (key[h] >= A) throw ConfigError("key action out of range at h=" + std::to_string(h));
        for (ActionIndex a = 0; a < A; ++a) {
            mdp.at(h, kKeyState, a, a == key[h] ? kKeyState : kLockedState) = 1.0;
            mdp.at(h, kLockedState, a, kLockedState) = 1.0;
        }
    }
    return {std::move(key), std::move(mdp)};
}

/// Uniformly random key.
inline std::vector<ActionIndex> random_key(std::size_t H, std::size_t A, std::uint64_t seed) {
    SplitMix64 rng(seed);
    std::vector<ActionIndex> key(H);
    for (auto& a : key) a = static_cast<ActionIndex>(rng() % A);
    return key;
}

inline KeyInstance make_key_dynamics(std::size_t H, std::size_t A, std::uint64_t seed) {
    return make_key_dynamics(H, A, random_key(H, A, seed));
}

/// Key with index `code` in base A; a*_0 is the least significant digit.
inline std::vector<ActionIndex> key_from_index(std::uint64_t code, std::size_t H, std::size_t A) {
    std::vector<ActionIndex> key(H);
    for (auto& a : key) {
        a = static_cast<ActionIndex>(code % A);
        code /= A;
    }
    return key;
}

inline std::uint64_t key_count(std::size_t H, std::size_t A) {
    const double n = std::pow(static_cast<double>(A), static_cast<double>(H));
    if (n > 1e15) throw ConfigError("A^H is too large to enumerate");
    return static_cast<std::uint64_t>(std::llround(n));
}

inline std::vector<std::vector<ActionIndex>> all_keys(std::size_t H, std::size_t A) {
    const std::uint64_t n = key_count(H, A);
    std::vector<std::vector<ActionIndex>> keys;
    keys.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) keys.push_back(key_from_index(i, H, A));
    return keys;
}

/// r_h(s,a) = 1 iff h = H-1, s = s*, a = a*_{H-1}.
inline RewardFunction r_key(const KeyInstance& inst) {
    const std::size_t H = inst.mdp.horizon();
    RewardFunction r(2, inst.mdp.num_actions(), H);
    r.set(H - 1, kKeyState, inst.key[H - 1], 1.0);
    return r;
}

/// Plays the key in s*, action 0 elsewhere.
inline Policy key_policy(const KeyInstance& inst) {
    const std::size_t H = inst.mdp.horizon();
    std::vector<ActionIndex> acts(2 * H, 0);
    for (std::size_t h = 0; h < H; ++h) acts[h * 2 + kKeyState] = inst.key[h];
    return Policy::deterministic(2, inst.mdp.num_actions(), H, std::move(acts));
}

/// |G_h| for h = 0..H: agents in s* at timestep h.
inline std::vector<std::size_t> survivors(const PhaseLog& log) {
    std::vector<std::size_t> g(log.horizon + 1, 0);
    for (std::size_t j = 0; j < log.num_agents(); ++j)
        for (std::size_t h = 0; h <= log.horizon; ++h)
            if (log.state(j, h) == kKeyState) ++g[h];
    return g;
}

using ExplorerFactory = std::function<std::unique_ptr<Explorer>()>;

/// Survivor counts |G^j_h| per trial (key), phase and timestep.
struct SurvivorCurve {
    std::size_t horizon = 0;
    std::size_t phases = 0;
    std::size_t agents = 0;
    /// counts[trial][phase][h]
    std::vector<std::vector<std::vector<std::size_t>>> counts;

    std::size_t trials() const noexcept { return counts.size(); }

    double mean(std::size_t phase, std::size_t h) const {
        double sum = 0.0;
        for (const auto& t : counts) sum += static_cast<double>(t[phase][h]);
        return sum / static_cast<double>(counts.size());
    }

    /// Fraction of trials with no agent in s* at timestep h of `phase`.
    double empty_fraction(std::size_t phase, std::size_t h) const {
        std::size_t n = 0;
        for (const auto& t : counts) n += t[phase][h] == 0 ? 1 : 0;
        return static_cast<double>(n) / static_cast<double>(counts.size());
    }

    bool monotone() const {
        for (const auto& t : counts)
            for (const auto& p : t)
                for (std::size_t h = 0; h + 1 < p.size(); ++h)
                    if (p[h + 1] > p[h] || p[h] > agents) return false;
        return true;
    }

    /// Long format: trial,phase,h,survivors
    void write_long(std::ostream& os) const {
        os << "trial,phase,h,survivors\n";
        for (std::size_t t = 0; t < counts.size(); ++t)
            for (std::size_t p = 0; p < counts[t].size(); ++p)
                for (std::size_t h = 0; h < counts[t][p].size(); ++h)
                    os << t << ',' << p << ',' << h << ',' << counts[t][p][h] << '\n';
    }

    /// One row per (phase, h): mean survivors and empty fraction over trials.
    void write_summary(std::ostream& os) const {
        os << "phase,h,mean_survivors,empty_fraction,trials\n";
        os.precision(17);
        for (std::size_t p = 0; p < phases; ++p)
            for (std::size_t h = 0; h <= horizon; ++h)
                os << p << ',' << h << ',' << mean(p, h) << ',' << empty_fraction(p, h) << ',' << trials() << '\n';
    }
};

/// Runs `factory()` for rho phases of m agents on each key's instance. With
/// `shared_seed` every key faces the same RngPlan, otherwise trial t uses
/// RngPlan(seed).derive(t).
inline SurvivorCurve survivor_experiment(const ExplorerFactory& factory, std::span<const std::vector<ActionIndex>> keys,
                                         std::size_t A, std::size_t rho, std::size_t m, std::uint64_t seed,
                                         bool shared_seed = true, unsigned threads = 1) {
    if (rho < 1) throw ConfigError("survivor experiment: rho must be >= 1");
    if (keys.empty()) throw ConfigError("survivor experiment: no keys");
    SurvivorCurve curve;
    curve.horizon = keys.front().size();
    curve.phases = rho;
    curve.agents = m;
    const RngPlan base(seed);
    for (std::size_t t = 0; t < keys.size(); ++t) {
        KeyInstance inst = make_key_dynamics(curve.horizon, A, keys[t]);
        Environment env(inst.mdp, shared_seed ? base : base.derive(t), threads);
        auto explorer = factory();
        ProtocolResult res = run_protocol(env, *explorer, rho, m);
        std::vector<std::vector<std::size_t>> per_phase;
        for (const auto& log : res.phases) per_phase.push_back(survivors(log));
        curve.counts.push_back(std::move(per_phase));
    }
    return curve;
}

inline SurvivorCurve survivor_experiment(const ExplorerFactory& factory, std::size_t H, std::size_t A,
                                         std::size_t rho, std::size_t m, std::size_t num_keys, std::uint64_t seed,
                                         unsigned threads = 1) {
    std::vector<std::vector<ActionIndex>> keys;
    const RngPlan base(seed);
    for (std::size_t t = 0; t < num_keys; ++t) keys.push_back(random_key(H, A, base.derive(t).stream_seed(0, 0)));
    return survivor_experiment(factory, keys, A, rho, m, seed, false, threads);
}

/// One-phase learner: agent i plays the i-th of the A^H open-loop action
/// sequences. The unique sequence still in s* at the end is the key, and the
/// key determines the whole transition table.
class ExhaustiveKeyLearner : public Explorer {
public:
    ExhaustiveKeyLearner(std::size_t H, std::size_t A) : H_(H), A_(A), sequences_(key_count(H, A)) {}

    void begin(const EnvironmentSpec& env, std::size_t, std::size_t agents) override {
        if (env.horizon != H_ || env.num_actions != A_ || env.num_states != 2) {
            throw DimensionError("exhaustive key learner expects a 2-state instance with H=" + std::to_string(H_) +
                                 ", A=" + std::to_string(A_));
        }
        if (agents < sequences_) {
            throw ConfigError("exhaustive key learner needs m >= A^H = " + std::to_string(sequences_) + ", got " +
                              std::to_string(agents));
        }
        env_ = env;
        m_ = agents;
    }

    PhasePlan plan_phase(std::size_t, std::span<const PhaseLog>) override {
        PhasePlan plan;
        for (std::uint64_t i = 0; i < sequences_; ++i) {
            const auto seq = key_from_index(i, H_, A_);
            std::vector<ActionIndex> acts(2 * H_);
            for (std::size_t h = 0; h < H_; ++h) acts[2 * h] = acts[2 * h + 1] = seq[h];
            plan.policies.push_back(Policy::deterministic(2, A_, H_, std::move(acts)));
        }
        plan.agents.resize(m_);
        for (std::size_t j = 0; j < m_; ++j) plan.agents[j] = {j < sequences_ ? j : 0, std::nullopt};
        return plan;
    }

    EstimatedDynamics finish(std::span<const PhaseLog> history) override {
        const PhaseLog& log = history.front();
        for (std::size_t j = 0; j < sequences_; ++j) {
            if (log.state(j, H_) != env_.initial_state) continue;
            recovered_key_ = key_from_index(j, H_, A_);
            const KeyInstance inst = make_key_dynamics(H_, A_, recovered_key_);
            EstimatedDynamics est(2, A_, H_, env_.initial_state, 0.0);
            for (std::size_t h = 0; h < H_; ++h) {
                for (StateIndex s = 0; s < 2; ++s) {
                    for (ActionIndex a = 0; a < A_; ++a) {
                        auto dst = est.row(h, s, a);
                        dst[2] = 0.0;
                        for (StateIndex t = 0; t < 2; ++t) dst[t] = inst.mdp(h, s, a, t);
                    }
                }
                est.active_sets[h] = {kKeyState, kLockedState};
            }
            for (const auto& l : history)
                for (const auto& [k, v] : l.counts) est.counts[k] += v;
            return est;
        }
        throw InvariantError("no agent stayed in the initial state: environment is not key dynamics");
    }

    const std::vector<ActionIndex>& recovered_key() const noexcept { return recovered_key_; }

private:
    std::size_t H_, A_;
    std::uint64_t sequences_;
    EnvironmentSpec env_;
    std::size_t m_ = 0;
    std::vector<ActionIndex> recovered_key_;
};

inline ExplorerFactory exhaustive_single_phase(std::size_t H, std::size_t A) {
    return [H, A] { return std::make_unique<ExhaustiveKeyLearner>(H, A); };
}

inline ExplorerFactory uniform_key_agents() {
    return [] { return std::make_unique<UniformExplorer>(); };
}

struct GridRow {
    std::size_t rho = 0;
    std::size_t m = 0;
    std::size_t A = 0;
    std::size_t H = 0;
    double failure_rate = 0.0;
    std::size_t trials = 0;
    /// Normal-approximation 95% half-width, 1.96 sqrt(p(1-p)/trials).
    double ci_halfwidth = 0.0;
};

inline void write_grid(std::ostream& os, std::span<const GridRow> rows) {
    os << "rho,m,A,H,failure_rate,trials,ci_halfwidth\n";
    os.precision(17);
    for (const auto& r : rows)
        os << r.rho << ',' << r.m << ',' << r.A << ',' << r.H << ',' << r.failure_rate << ',' << r.trials << ','
           << r.ci_halfwidth << '\n';
}

/// True value, on the instance, of the policy planned on `est` for r_key.
inline double key_value_of_estimate(const KeyInstance& inst, const EstimatedDynamics& est) {
    const RewardFunction r = r_key(inst);
    return policy_value(optimal_policy(est, r).policy, inst.mdp, r);
}

/// For every (rho, m): fraction of random-key trials where planning on the
/// learned estimate for r_key gets true value below 0.9.
inline std::vector<GridRow> value_gap_vs_phase_budget(std::span<const std::size_t> rhos,
                                                      std::span<const std::size_t> ms, std::size_t A,
                                                      std::size_t H, std::size_t trials, std::uint64_t seed,
                                                      const ExplorerFactory& factory, unsigned threads = 1) {
    if (trials == 0) throw ConfigError("grid: trials must be >= 1");
    std::vector<GridRow> rows;
    const RngPlan base(seed);
    for (std::size_t rho : rhos) {
        for (std::size_t m : ms) {
            std::size_t failures = 0;
            for (std::size_t t = 0; t < trials; ++t) {
                const RngPlan trial = base.derive(t);
                KeyInstance inst = make_key_dynamics(H, A, random_key(H, A, trial.stream_seed(0, 0)));
                Environment env(inst.mdp, trial.derive(rho * 1000003ULL + m), threads);
                auto explorer = factory();
                ProtocolResult res = run_protocol(env, *explorer, rho, m);
                if (key_value_of_estimate(inst, res.estimate) < 0.9) ++failures;
            }
            GridRow row{rho, m, A, H, static_cast<double>(failures) / static_cast<double>(trials), trials, 0.0};
            row.ci_halfwidth = 1.96 * std::sqrt(row.failure_rate * (1.0 - row.failure_rate) / static_cast<double>(trials));
            rows.push_back(row);
        }
    }
    return rows;
}

} // namespace marfe

