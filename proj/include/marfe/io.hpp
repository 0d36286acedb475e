#pragma once

// Structured-text (JSON) files for MDPs, rewards, policies, estimates and
// phase logs. Every document carries a "format" tag naming its type and
// version. Numbers are written in shortest round-trip form, so write-then-read
// reproduces every value exactly.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "estimate.hpp"
#include "mdp.hpp"
#include "simulator.hpp"

namespace marfe::io {

using nlohmann::json;

inline constexpr const char* kMdpFormat = "marfe/tabular-mdp@1";
inline constexpr const char* kRewardFormat = "marfe/reward@1";
inline constexpr const char* kPolicyFormat = "marfe/policy@1";
inline constexpr const char* kEstimateFormat = "marfe/estimated-dynamics@1";
inline constexpr const char* kPhaseLogFormat = "marfe/phase-log@1";

/// Rows further than this from summing to 1 (but within kRowTolerance) are
/// renormalized on load; closer rows are kept bit-for-bit.
inline constexpr double kRenormalizeThreshold = 1e-12;

namespace detail {

inline json parse_text(const std::string& text, const std::string& source) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(source + ": " + e.what());
    }
}

inline const json& field(const json& obj, const char* name, const std::string& path) {
    if (!obj.is_object()) throw ParseError(path + ": expected an object");
    auto it = obj.find(name);
    if (it == obj.end()) throw ParseError(path + "." + name + ": missing field");
    return *it;
}

inline std::size_t size_field(const json& obj, const char* name, const std::string& path, bool positive = true) {
    const json& v = field(obj, name, path);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ParseError(path + "." + name + ": expected a non-negative integer");
    }
    const auto n = v.get<std::size_t>();
    if (positive && n == 0) throw DimensionError(path + "." + name + ": must be >= 1");
    return n;
}

inline double number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ParseError(path + ": expected a number");
    return v.get<double>();
}

inline const json& array_of(const json& v, std::size_t n, const std::string& path) {
    if (!v.is_array()) throw ParseError(path + ": expected an array");
    if (v.size() != n) {
        throw ParseError(path + ": expected " + std::to_string(n) + " entries, found " + std::to_string(v.size()));
    }
    return v;
}

inline void check_format(const json& doc, const char* expected, const std::string& source) {
    const json& f = field(doc, "format", source);
    if (!f.is_string() || f.get<std::string>() != expected) {
        throw ParseError(source + ".format: expected \"" + std::string(expected) + "\"");
    }
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path.string() + ": cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out << text;
}

/// Reads transitions[h][s][a][s'] into `k` (num_states columns per row).
inline void read_transitions(const json& doc, TransitionKernel& k, const std::string& source) {
    const std::string base = source + ".transitions";
    const json& t = array_of(field(doc, "transitions", source), k.horizon(), base);
    for (std::size_t h = 0; h < k.horizon(); ++h) {
        const std::string ph = base + "[" + std::to_string(h) + "]";
        const json& th = array_of(t[h], k.num_states(), ph);
        for (StateIndex s = 0; s < k.num_states(); ++s) {
            const std::string ps = ph + "[" + std::to_string(s) + "]";
            const json& ts = array_of(th[s], k.num_actions(), ps);
            for (ActionIndex a = 0; a < k.num_actions(); ++a) {
                const std::string pa = ps + "[" + std::to_string(a) + "]";
                const json& row = array_of(ts[a], k.num_states(), pa);
                auto dst = k.row(h, s, a);
                for (StateIndex n = 0; n < k.num_states(); ++n) {
                    dst[n] = number(row[n], pa + "[" + std::to_string(n) + "]");
                }
            }
        }
    }
}

/// Renormalizes rows whose sum is off by more than kRenormalizeThreshold but
/// within kRowTolerance and whose entries are all in [0,1].
inline void renormalize_rows(TransitionKernel& k) {
    for (std::size_t h = 0; h < k.horizon(); ++h)
        for (StateIndex s = 0; s < k.num_states(); ++s)
            for (ActionIndex a = 0; a < k.num_actions(); ++a) {
                auto row = k.row(h, s, a);
                double sum = 0.0;
                bool in_range = true;
                for (double v : row) {
                    sum += v;
                    in_range = in_range && v >= 0.0 && v <= 1.0;
                }
                const double dev = std::abs(sum - 1.0);
                if (in_range && dev > kRenormalizeThreshold && dev <= kRowTolerance) {
                    for (double& v : row) v /= sum;
                }
            }
}

inline std::string row_text(std::span<const double> row) {
    return json(std::vector<double>(row.begin(), row.end())).dump();
}

/// transitions block with one line per (h, s), holding its A rows.
inline void write_transitions(std::ostringstream& os, const TransitionKernel& k) {
    os << "  \"transitions\": [\n";
    for (std::size_t h = 0; h < k.horizon(); ++h) {
        os << "    [\n";
        for (StateIndex s = 0; s < k.num_states(); ++s) {
            os << "      [";
            for (ActionIndex a = 0; a < k.num_actions(); ++a) os << (a ? ", " : "") << row_text(k.row(h, s, a));
            os << "]" << (s + 1 < k.num_states() ? "," : "") << "\n";
        }
        os << "    ]" << (h + 1 < k.horizon() ? "," : "") << "\n";
    }
    os << "  ]";
}

inline json counts_json(const TransitionCounts& counts) {
    json c = json::array();
    for (const auto& [k, v] : counts) c.push_back({k.h, k.s, k.a, k.next, v});
    return c;
}

inline TransitionCounts read_counts(const json& c, const std::string& path) {
    if (!c.is_array()) throw ParseError(path + ": expected an array");
    TransitionCounts out;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const std::string p = path + "[" + std::to_string(i) + "]";
        const json& e = array_of(c[i], 5, p);
        for (const auto& x : e)
            if (!x.is_number_unsigned() && !(x.is_number_integer() && x.get<long long>() >= 0))
                throw ParseError(p + ": expected non-negative integers");
        out[{e[0].get<std::size_t>(), e[1].get<std::size_t>(), e[2].get<std::size_t>(), e[3].get<std::size_t>()}] =
            e[4].get<std::uint64_t>();
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------- MDP

inline std::string mdp_to_string(const TabularMdp& mdp) {
    std::ostringstream os;
    os << "{\n  \"format\": \"" << kMdpFormat << "\",\n"
       << "  \"num_states\": " << mdp.num_states() << ",\n"
       << "  \"num_actions\": " << mdp.num_actions() << ",\n"
       << "  \"horizon\": " << mdp.horizon() << ",\n"
       << "  \"initial_state\": " << mdp.initial_state() << ",\n";
    detail::write_transitions(os, mdp);
    os << "\n}\n";
    return os.str();
}

inline TabularMdp mdp_from_string(const std::string& text, const std::string& source = "<mdp>") {
    const json doc = detail::parse_text(text, source);
    detail::check_format(doc, kMdpFormat, source);
    const std::size_t S = detail::size_field(doc, "num_states", source);
    const std::size_t A = detail::size_field(doc, "num_actions", source);
    const std::size_t H = detail::size_field(doc, "horizon", source);
    const std::size_t s0 = detail::size_field(doc, "initial_state", source, false);
    TabularMdp mdp(S, A, H, s0);
    detail::read_transitions(doc, mdp, source);
    detail::renormalize_rows(mdp);
    const auto violations = validate_mdp(mdp);
    if (!violations.empty()) {
        std::string msg = source + ": validate_mdp reported " + std::to_string(violations.size()) + " violation(s)";
        for (std::size_t i = 0; i < std::min<std::size_t>(violations.size(), 5); ++i)
            msg += "; " + violations[i].to_string();
        throw InvariantError(msg);
    }
    return mdp;
}

inline void write_mdp(const TabularMdp& mdp, const std::filesystem::path& path) {
    detail::write_file(path, mdp_to_string(mdp));
}

inline TabularMdp read_mdp(const std::filesystem::path& path) {
    return mdp_from_string(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------- Reward

inline std::string reward_to_string(const RewardFunction& r) {
    std::ostringstream os;
    os << "{\n  \"format\": \"" << kRewardFormat << "\",\n"
       << "  \"num_states\": " << r.num_states() << ",\n"
       << "  \"num_actions\": " << r.num_actions() << ",\n"
       << "  \"horizon\": " << r.horizon() << ",\n  \"rewards\": [\n";
    for (std::size_t h = 0; h < r.horizon(); ++h) {
        os << "    [";
        for (StateIndex s = 0; s < r.num_states(); ++s) {
            std::vector<double> row(r.num_actions());
            for (ActionIndex a = 0; a < r.num_actions(); ++a) row[a] = r(h, s, a);
            os << (s ? ", " : "") << json(row).dump();
        }
        os << "]" << (h + 1 < r.horizon() ? "," : "") << "\n";
    }
    os << "  ]\n}\n";
    return os.str();
}

inline RewardFunction reward_from_string(const std::string& text, const std::string& source = "<reward>") {
    const json doc = detail::parse_text(text, source);
    detail::check_format(doc, kRewardFormat, source);
    const std::size_t S = detail::size_field(doc, "num_states", source);
    const std::size_t A = detail::size_field(doc, "num_actions", source);
    const std::size_t H = detail::size_field(doc, "horizon", source);
    const std::string base = source + ".rewards";
    const json& r = detail::array_of(detail::field(doc, "rewards", source), H, base);
    std::vector<double> values;
    values.reserve(H * S * A);
    for (std::size_t h = 0; h < H; ++h) {
        const std::string ph = base + "[" + std::to_string(h) + "]";
        const json& rh = detail::array_of(r[h], S, ph);
        for (StateIndex s = 0; s < S; ++s) {
            const std::string ps = ph + "[" + std::to_string(s) + "]";
            const json& rs = detail::array_of(rh[s], A, ps);
            for (ActionIndex a = 0; a < A; ++a) {
                const double v = detail::number(rs[a], ps + "[" + std::to_string(a) + "]");
                if (!(v >= 0.0 && v <= 1.0)) {
                    throw InvariantError(ps + "[" + std::to_string(a) + "]: reward outside [0,1]");
                }
                values.push_back(v);
            }
        }
    }
    return RewardFunction(S, A, H, std::move(values));
}

inline void write_reward(const RewardFunction& r, const std::filesystem::path& path) {
    detail::write_file(path, reward_to_string(r));
}

inline RewardFunction read_reward(const std::filesystem::path& path) {
    return reward_from_string(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------- Policy

inline std::string policy_to_string(const Policy& pi) {
    std::ostringstream os;
    const bool det = pi.is_deterministic();
    os << "{\n  \"format\": \"" << kPolicyFormat << "\",\n"
       << "  \"kind\": \"" << (det ? "deterministic" : "stochastic") << "\",\n"
       << "  \"num_states\": " << pi.num_states() << ",\n"
       << "  \"num_actions\": " << pi.num_actions() << ",\n"
       << "  \"horizon\": " << pi.horizon() << ",\n"
       << "  \"" << (det ? "actions" : "probabilities") << "\": [\n";
    for (std::size_t h = 0; h < pi.horizon(); ++h) {
        os << "    ";
        if (det) {
            std::vector<ActionIndex> row(pi.num_states());
            for (StateIndex s = 0; s < pi.num_states(); ++s) row[s] = pi.action(h, s);
            os << json(row).dump();
        } else {
            os << "[";
            for (StateIndex s = 0; s < pi.num_states(); ++s) {
                std::vector<double> row(pi.num_actions());
                for (ActionIndex a = 0; a < pi.num_actions(); ++a) row[a] = pi.prob(h, s, a);
                os << (s ? ", " : "") << json(row).dump();
            }
            os << "]";
        }
        os << (h + 1 < pi.horizon() ? "," : "") << "\n";
    }
    os << "  ]\n}\n";
    return os.str();
}

inline Policy policy_from_string(const std::string& text, const std::string& source = "<policy>") {
    const json doc = detail::parse_text(text, source);
    detail::check_format(doc, kPolicyFormat, source);
    const json& kind = detail::field(doc, "kind", source);
    if (!kind.is_string() || (kind != "deterministic" && kind != "stochastic")) {
        throw ParseError(source + ".kind: expected \"deterministic\" or \"stochastic\"");
    }
    const std::size_t S = detail::size_field(doc, "num_states", source);
    const std::size_t A = detail::size_field(doc, "num_actions", source);
    const std::size_t H = detail::size_field(doc, "horizon", source);
    try {
        if (kind == "deterministic") {
            const std::string base = source + ".actions";
            const json& t = detail::array_of(detail::field(doc, "actions", source), H, base);
            std::vector<ActionIndex> acts;
            for (std::size_t h = 0; h < H; ++h) {
                const std::string ph = base + "[" + std::to_string(h) + "]";
                const json& row = detail::array_of(t[h], S, ph);
                for (StateIndex s = 0; s < S; ++s) {
                    if (!row[s].is_number_integer() || row[s].get<long long>() < 0)
                        throw ParseError(ph + "[" + std::to_string(s) + "]: expected an action index");
                    acts.push_back(row[s].get<ActionIndex>());
                }
            }
            return Policy::deterministic(S, A, H, std::move(acts));
        }
        const std::string base = source + ".probabilities";
        const json& t = detail::array_of(detail::field(doc, "probabilities", source), H, base);
        std::vector<double> probs;
        for (std::size_t h = 0; h < H; ++h) {
            const std::string ph = base + "[" + std::to_string(h) + "]";
            const json& th = detail::array_of(t[h], S, ph);
            for (StateIndex s = 0; s < S; ++s) {
                const std::string ps = ph + "[" + std::to_string(s) + "]";
                const json& row = detail::array_of(th[s], A, ps);
                for (ActionIndex a = 0; a < A; ++a) probs.push_back(detail::number(row[a], ps));
            }
        }
        return Policy::stochastic(S, A, H, std::move(probs));
    } catch (const InvariantError& e) {
        throw InvariantError(source + ": " + e.what());
    }
}

inline void write_policy(const Policy& pi, const std::filesystem::path& path) {
    detail::write_file(path, policy_to_string(pi));
}

inline Policy read_policy(const std::filesystem::path& path) {
    return policy_from_string(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------- Estimate

/// Sink column included: each row has num_states + 1 entries, the last being the sink.
inline std::string estimate_to_string(const EstimatedDynamics& est) {
    std::ostringstream os;
    os << "{\n  \"format\": \"" << kEstimateFormat << "\",\n"
       << "  \"num_states\": " << est.num_real_states() << ",\n"
       << "  \"num_actions\": " << est.num_actions() << ",\n"
       << "  \"horizon\": " << est.horizon() << ",\n"
       << "  \"initial_state\": " << est.initial_state() << ",\n"
       << "  \"sink_state\": " << est.num_real_states() << ",\n"
       << "  \"beta\": " << json(est.beta).dump() << ",\n"
       << "  \"active_sets\": " << json(est.active_sets).dump() << ",\n";
    json warn = json::array();
    for (const auto& w : est.warnings) warn.push_back({{"h", w.h}, {"s", w.s}, {"a", w.a}, {"kind", "zero_visits"}});
    os << "  \"warnings\": " << warn.dump() << ",\n"
       << "  \"counts\": " << detail::counts_json(est.counts).dump() << ",\n";
    detail::write_transitions(os, est);
    os << "\n}\n";
    return os.str();
}

inline EstimatedDynamics estimate_from_string(const std::string& text, const std::string& source = "<estimate>") {
    const json doc = detail::parse_text(text, source);
    detail::check_format(doc, kEstimateFormat, source);
    const std::size_t S = detail::size_field(doc, "num_states", source);
    const std::size_t A = detail::size_field(doc, "num_actions", source);
    const std::size_t H = detail::size_field(doc, "horizon", source);
    const std::size_t s0 = detail::size_field(doc, "initial_state", source, false);
    if (detail::size_field(doc, "sink_state", source, false) != S) {
        throw ParseError(source + ".sink_state: must equal num_states");
    }
    EstimatedDynamics est(S, A, H, s0, detail::number(detail::field(doc, "beta", source), source + ".beta"));
    const json& act = detail::array_of(detail::field(doc, "active_sets", source), H, source + ".active_sets");
    for (std::size_t h = 0; h < H; ++h) {
        if (!act[h].is_array()) throw ParseError(source + ".active_sets[" + std::to_string(h) + "]: expected an array");
        for (const auto& s : act[h]) {
            if (!s.is_number_integer() || s.get<long long>() < 0 || s.get<std::size_t>() >= S)
                throw ParseError(source + ".active_sets[" + std::to_string(h) + "]: bad state index");
            est.active_sets[h].push_back(s.get<StateIndex>());
        }
    }
    est.counts = detail::read_counts(detail::field(doc, "counts", source), source + ".counts");
    const json& warn = detail::field(doc, "warnings", source);
    if (!warn.is_array()) throw ParseError(source + ".warnings: expected an array");
    for (const auto& w : warn) {
        est.warnings.push_back({detail::size_field(w, "h", source + ".warnings", false),
                                detail::size_field(w, "s", source + ".warnings", false),
                                detail::size_field(w, "a", source + ".warnings", false)});
    }
    detail::read_transitions(doc, est, source);
    detail::renormalize_rows(est);
    const auto violations = validate_estimate(est);
    if (!violations.empty()) {
        throw InvariantError(source + ": invalid estimate; " + violations.front().to_string());
    }
    return est;
}

inline void write_estimate(const EstimatedDynamics& est, const std::filesystem::path& path) {
    detail::write_file(path, estimate_to_string(est));
}

inline EstimatedDynamics read_estimate(const std::filesystem::path& path) {
    return estimate_from_string(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------- PhaseLog

inline std::string phase_log_to_string(const PhaseLog& log) {
    json doc;
    doc["format"] = kPhaseLogFormat;
    doc["phase_index"] = log.phase_index;
    doc["horizon"] = log.horizon;
    doc["counted_timestep"] = log.counted_timestep ? json(*log.counted_timestep) : json(nullptr);
    json agents = json::array();
    for (std::size_t j = 0; j < log.num_agents(); ++j) {
        const auto& as = log.assignments[j];
        json e = {{"policy", as.policy_id}};
        if (as.forced) e["forced"] = {as.forced->timestep, as.forced->state, as.forced->action};
        const Trajectory t = log.trajectory(j);
        e["states"] = t.states;
        e["actions"] = t.actions;
        agents.push_back(std::move(e));
    }
    doc["agents"] = std::move(agents);
    doc["counts"] = detail::counts_json(log.counts);
    return doc.dump(1) + "\n";
}

inline PhaseLog phase_log_from_string(const std::string& text, const std::string& source = "<phase-log>") {
    const json doc = detail::parse_text(text, source);
    detail::check_format(doc, kPhaseLogFormat, source);
    PhaseLog log;
    log.phase_index = detail::size_field(doc, "phase_index", source, false);
    log.horizon = detail::size_field(doc, "horizon", source);
    const json& ct = detail::field(doc, "counted_timestep", source);
    if (!ct.is_null()) log.counted_timestep = ct.get<std::size_t>();
    const json& agents = detail::field(doc, "agents", source);
    if (!agents.is_array()) throw ParseError(source + ".agents: expected an array");
    for (std::size_t j = 0; j < agents.size(); ++j) {
        const std::string p = source + ".agents[" + std::to_string(j) + "]";
        AgentAssignment as{detail::size_field(agents[j], "policy", p, false), std::nullopt};
        if (agents[j].contains("forced")) {
            const json& f = detail::array_of(agents[j]["forced"], 3, p + ".forced");
            as.forced = ForcedAction{f[0].get<std::size_t>(), f[1].get<std::size_t>(), f[2].get<std::size_t>()};
        }
        log.assignments.push_back(as);
        const json& st = detail::array_of(detail::field(agents[j], "states", p), log.horizon + 1, p + ".states");
        const json& ac = detail::array_of(detail::field(agents[j], "actions", p), log.horizon, p + ".actions");
        for (const auto& s : st) log.states.push_back(s.get<std::uint32_t>());
        for (const auto& a : ac) log.actions.push_back(a.get<std::uint32_t>());
    }
    log.counts = detail::read_counts(detail::field(doc, "counts", source), source + ".counts");
    return log;
}

inline void write_phase_log(const PhaseLog& log, const std::filesystem::path& path) {
    detail::write_file(path, phase_log_to_string(log));
}

inline PhaseLog read_phase_log(const std::filesystem::path& path) {
    return phase_log_from_string(detail::read_file(path), path.string());
}

} // namespace marfe::io
