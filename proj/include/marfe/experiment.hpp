#pragma once

// Config-driven experiments: parse and validate an experiment description,
// run it, and write result tables plus a run manifest to an output directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "algorithm.hpp"
#include "baselines.hpp"
#include "eval.hpp"
#include "invariants.hpp"
#include "io.hpp"
#include "keydyn.hpp"

namespace marfe::exp {

using json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kManifestFormat = "marfe/run-manifest@1";

/// Every problem found in a config, reported together.
struct ConfigInvalid : ConfigError {
    std::vector<std::string> violations;
    explicit ConfigInvalid(std::vector<std::string> v)
        : ConfigError(join(v)), violations(std::move(v)) {}

    static std::string join(const std::vector<std::string>& v) {
        std::string s = "invalid config: ";
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "; " : "") + v[i];
        return s;
    }
};

/// Runtime failure tagged with the module it came from.
struct ModuleError : std::runtime_error {
    std::string module;
    ModuleError(std::string mod, const std::string& what) : std::runtime_error(what), module(std::move(mod)) {}
};

/// Runs fn; config-type failures become ConfigInvalid, anything else a ModuleError.
template <class Fn>
auto in_module(const std::string& module, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const ConfigInvalid&) {
        throw;
    } catch (const ModuleError&) {
        throw;
    } catch (const ConfigError& e) {
        throw ConfigInvalid({module + ": " + e.what()});
    } catch (const DimensionError& e) {
        throw ConfigInvalid({module + ": " + e.what()});
    } catch (const std::exception& e) {
        throw ModuleError(module, e.what());
    }
}

/// Empirical desk-scale agent count, c S A H / eps^2 with c = 200, capped by the
/// closed-form bound. At S=4, A=2, H=4, eps=0.25 this gives 102400.
inline constexpr double kDeskConstant = 200.0;

inline double desk_agent_count(std::size_t S, std::size_t A, std::size_t H, double epsilon, double delta) {
    const double desk = std::ceil(kDeskConstant * static_cast<double>(S * A * H) / (epsilon * epsilon));
    return std::min(desk, agent_bound(S, A, H, epsilon, delta).m);
}

enum class Kind { marfe, naive, uniform, survivors, grid, invariants };

inline const char* kind_name(Kind k) {
    switch (k) {
        case Kind::marfe: return "marfe";
        case Kind::naive: return "naive";
        case Kind::uniform: return "uniform";
        case Kind::survivors: return "lower-bound-survivors";
        case Kind::grid: return "lower-bound-grid";
        case Kind::invariants: return "invariants";
    }
    return "?";
}

struct InstanceSpec {
    std::string type;  // file | random | deterministic | key
    std::filesystem::path path;
    std::size_t states = 0, actions = 0, horizon = 0;
    std::uint64_t seed = 0;
    double concentration = 1.0;
    std::vector<ActionIndex> key;  // empty: random keys
    bool all_keys = false;
    bool seed_pinned = false;  ///< instance.seed given explicitly; otherwise it follows the master seed
};

struct ExperimentConfig {
    Kind kind = Kind::marfe;
    InstanceSpec instance;
    std::size_t m = 0;
    std::optional<double> beta;
    std::uint64_t threshold = 0;
    std::size_t rho = 1;
    std::vector<std::size_t> ms, rhos;
    std::string learner = "uniform";
    double epsilon = 0.25;
    double delta = 0.1;
    std::size_t rewards = 100;
    std::size_t policies = 200;
    std::size_t runs = 20;
    std::size_t trials = 200;
    std::size_t contraction_pairs = 1000;
    double required_fraction = 0.9;
    std::size_t survivor_m = 0;  // 0: no survivor check in the invariant suite
    std::size_t survivor_keys = 0;
    std::uint64_t seed = 0;
    std::filesystem::path output = "out";
    bool dump_phase_logs = false;
    bool long_format = true;
};

namespace detail {

class Reader {
public:
    Reader(const json& root, std::vector<std::string>& errors) : root_(root), errors_(errors) {}

    const json* find(const std::string& path) const {
        const json* cur = &root_;
        std::size_t start = 0;
        while (true) {
            const auto dot = path.find('.', start);
            const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (!cur->is_object()) return nullptr;
            auto it = cur->find(key);
            if (it == cur->end()) return nullptr;
            cur = &*it;
            if (dot == std::string::npos) return cur;
            start = dot + 1;
        }
    }

    bool has(const std::string& path) const { return find(path) != nullptr; }

    void fail(const std::string& path, const std::string& why) { errors_.push_back(path + ": " + why); }

    std::optional<std::uint64_t> integer(const std::string& path, bool required, std::uint64_t min = 0) {
        const json* v = find(path);
        if (!v) {
            if (required) fail(path, "missing field");
            return std::nullopt;
        }
        if (!v->is_number_integer() || v->get<long long>() < 0) {
            fail(path, "expected a non-negative integer");
            return std::nullopt;
        }
        const auto n = v->get<std::uint64_t>();
        if (n < min) {
            fail(path, "must be >= " + std::to_string(min));
            return std::nullopt;
        }
        return n;
    }

    std::optional<double> real(const std::string& path, bool required, double lo, double hi, bool open_lo = true,
                               bool open_hi = true) {
        const json* v = find(path);
        if (!v) {
            if (required) fail(path, "missing field");
            return std::nullopt;
        }
        if (!v->is_number()) {
            fail(path, "expected a number");
            return std::nullopt;
        }
        const double x = v->get<double>();
        const bool ok = (open_lo ? x > lo : x >= lo) && (open_hi ? x < hi : x <= hi);
        if (!ok) {
            std::ostringstream os;
            os << "must lie in " << (open_lo ? "(" : "[") << lo << ", " << hi << (open_hi ? ")" : "]");
            fail(path, os.str());
            return std::nullopt;
        }
        return x;
    }

    std::optional<std::string> text(const std::string& path, bool required) {
        const json* v = find(path);
        if (!v) {
            if (required) fail(path, "missing field");
            return std::nullopt;
        }
        if (!v->is_string()) {
            fail(path, "expected a string");
            return std::nullopt;
        }
        return v->get<std::string>();
    }

    std::optional<bool> flag(const std::string& path) {
        const json* v = find(path);
        if (!v) return std::nullopt;
        if (!v->is_boolean()) {
            fail(path, "expected true or false");
            return std::nullopt;
        }
        return v->get<bool>();
    }

    std::optional<std::vector<std::size_t>> integers(const std::string& path, bool required, std::uint64_t min) {
        const json* v = find(path);
        if (!v) {
            if (required) fail(path, "missing field");
            return std::nullopt;
        }
        if (!v->is_array() || v->empty()) {
            fail(path, "expected a non-empty array of integers");
            return std::nullopt;
        }
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < v->size(); ++i) {
            const json& x = (*v)[i];
            if (!x.is_number_integer() || x.get<long long>() < static_cast<long long>(min)) {
                fail(path + "[" + std::to_string(i) + "]", "must be an integer >= " + std::to_string(min));
                return std::nullopt;
            }
            out.push_back(x.get<std::size_t>());
        }
        return out;
    }

private:
    const json& root_;
    std::vector<std::string>& errors_;
};

template <class T>
void assign(T& dst, const std::optional<T>& v) {
    if (v) dst = *v;
}

} // namespace detail

/// Replaces the master seed; an unpinned instance seed follows it.
inline void override_seed(ExperimentConfig& c, std::uint64_t seed) {
    c.seed = seed;
    if (!c.instance.seed_pinned) c.instance.seed = seed;
}

/// Validates `doc` and resolves defaults. Relative instance/output paths are
/// taken relative to `base_dir`. Throws ConfigInvalid listing every violation.
inline ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir = {}) {
    std::vector<std::string> errors;
    detail::Reader r(doc, errors);
    ExperimentConfig c;
    if (!doc.is_object()) throw ConfigInvalid({"config: expected a JSON object"});

    const auto kind = r.text("kind", true);
    bool kind_ok = false;
    if (kind) {
        for (Kind k : {Kind::marfe, Kind::naive, Kind::uniform, Kind::survivors, Kind::grid, Kind::invariants})
            if (*kind == kind_name(k)) {
                c.kind = k;
                kind_ok = true;
            }
        if (!kind_ok)
            r.fail("kind", "unknown experiment kind \"" + *kind +
                               "\" (expected marfe, naive, uniform, lower-bound-survivors, lower-bound-grid, invariants)");
    }

    detail::assign(c.seed, r.integer("seed", false));
    if (auto out = r.text("output", false)) c.output = *out;
    if (c.output.is_relative() && !base_dir.empty()) c.output = base_dir / c.output;

    // Instance.
    InstanceSpec& in = c.instance;
    const bool lower_bound = kind_ok && (c.kind == Kind::survivors || c.kind == Kind::grid);
    if (!r.has("instance")) {
        r.fail("instance", "missing field");
    } else if (auto type = r.text("instance.type", true)) {
        in.type = *type;
        in.seed = c.seed;
        if (auto v = r.integer("instance.seed", false)) {
            in.seed = *v;
            in.seed_pinned = true;
        }
        if (lower_bound && in.type != "key") r.fail("instance.type", "lower-bound experiments need a key instance");
        if (in.type == "file") {
            if (auto p = r.text("instance.path", true)) {
                in.path = *p;
                if (in.path.is_relative() && !base_dir.empty()) in.path = base_dir / in.path;
                if (!std::filesystem::exists(in.path)) r.fail("instance.path", "file not found: " + in.path.string());
            }
        } else if (in.type == "random" || in.type == "deterministic") {
            detail::assign<std::size_t>(in.states, r.integer("instance.states", true, 1));
            detail::assign<std::size_t>(in.actions, r.integer("instance.actions", true, 1));
            detail::assign<std::size_t>(in.horizon, r.integer("instance.horizon", true, 1));
            if (in.type == "random") detail::assign(in.concentration, r.real("instance.concentration", false, 0.0, 1e9));
        } else if (in.type == "key") {
            in.states = 2;
            detail::assign<std::size_t>(in.actions, r.integer("instance.actions", true, 1));
            detail::assign<std::size_t>(in.horizon, r.integer("instance.horizon", true, 1));
            detail::assign(in.all_keys, r.flag("instance.all_keys"));
            if (auto key = r.integers("instance.key", false, 0)) {
                in.key.assign(key->begin(), key->end());
                if (in.horizon && in.key.size() != in.horizon)
                    r.fail("instance.key", "length " + std::to_string(in.key.size()) + " differs from horizon " +
                                               std::to_string(in.horizon));
                for (ActionIndex a : in.key)
                    if (in.actions && a >= in.actions) r.fail("instance.key", "action out of range");
            }
        } else {
            r.fail("instance.type", "unknown instance type \"" + in.type + "\" (expected file, random, deterministic, key)");
        }
    }

    // Evaluation parameters shared by several kinds.
    detail::assign(c.epsilon, r.real("evaluation.epsilon", false, 0.0, 1.0));
    detail::assign(c.delta, r.real("evaluation.delta", false, 0.0, 1.0));
    if (kind_ok && c.kind == Kind::invariants) {
        c.rewards = 20;
        c.policies = 100;
    }
    detail::assign<std::size_t>(c.rewards, r.integer("evaluation.rewards", false, 0));
    detail::assign<std::size_t>(c.policies, r.integer("evaluation.policies", false, 1));
    detail::assign(c.long_format, r.flag("output_long_format"));
    detail::assign(c.dump_phase_logs, r.flag("dump_phase_logs"));
    if (auto b = r.real("algorithm.beta", false, 0.0, 1.0)) c.beta = b;

    if (kind_ok) {
        switch (c.kind) {
            case Kind::marfe:
                detail::assign<std::size_t>(c.m, r.integer("algorithm.m", true, 1));
                break;
            case Kind::naive:
                detail::assign<std::size_t>(c.m, r.integer("algorithm.m", true, 1));
                c.threshold = static_cast<std::uint64_t>(std::ceil(1.0 / (c.epsilon * c.epsilon)));
                detail::assign(c.threshold, r.integer("algorithm.threshold", false, 1));
                break;
            case Kind::uniform:
                detail::assign<std::size_t>(c.m, r.integer("algorithm.m", true, 1));
                c.rho = in.horizon;
                detail::assign<std::size_t>(c.rho, r.integer("algorithm.rho", false, 1));
                break;
            case Kind::survivors:
                detail::assign<std::size_t>(c.m, r.integer("algorithm.m", true, 1));
                detail::assign<std::size_t>(c.rho, r.integer("algorithm.rho", false, 1));
                detail::assign<std::size_t>(c.trials, r.integer("evaluation.trials", false, 1));
                break;
            case Kind::grid:
                if (auto v = r.integers("algorithm.ms", true, 1)) c.ms = *v;
                c.rhos = {1};
                if (auto v = r.integers("algorithm.rhos", false, 1)) c.rhos = *v;
                detail::assign<std::size_t>(c.trials, r.integer("evaluation.trials", false, 1));
                break;
            case Kind::invariants:
                detail::assign<std::size_t>(c.m, r.integer("algorithm.m", true, 1));
                detail::assign<std::size_t>(c.runs, r.integer("evaluation.runs", false, 1));
                detail::assign<std::size_t>(c.contraction_pairs, r.integer("evaluation.contraction_pairs", false, 1));
                detail::assign(c.required_fraction, r.real("evaluation.required_fraction", false, 0.0, 1.0, true, false));
                detail::assign<std::size_t>(c.survivor_m, r.integer("evaluation.survivor_m", false, 1));
                detail::assign<std::size_t>(c.survivor_keys, r.integer("evaluation.survivor_keys", false, 1));
                break;
        }
        if (lower_bound) {
            if (auto l = r.text("algorithm.learner", false)) c.learner = *l;
            if (c.learner != "uniform" && c.learner != "exhaustive" && c.learner != "marfe")
                r.fail("algorithm.learner", "unknown learner \"" + c.learner + "\" (expected uniform, exhaustive, marfe)");
            if (c.learner == "marfe") {
                if (!c.beta) r.fail("algorithm.beta", "missing field (required by the marfe learner)");
                const auto check_rho = [&](std::size_t rho) {
                    if (in.horizon && rho != in.horizon)
                        r.fail("algorithm.rho", "the marfe learner runs exactly H=" + std::to_string(in.horizon) + " phases");
                };
                if (c.kind == Kind::survivors) check_rho(c.rho);
                for (std::size_t rho : c.rhos) check_rho(rho);
            }
            if (c.kind == Kind::survivors && c.learner == "exhaustive" && c.rho != 1)
                r.fail("algorithm.rho", "the exhaustive learner uses a single phase");
        }
        const bool planner = c.kind == Kind::marfe || c.kind == Kind::invariants;
        if (planner && !c.beta && in.states && in.horizon) c.beta = MarfeConfig::beta_for(c.epsilon, in.states, in.horizon);
    }

    if (!errors.empty()) throw ConfigInvalid(std::move(errors));
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigInvalid({"config: cannot open " + path.string()});
    std::ostringstream ss;
    ss << in.rdbuf();
    json doc;
    try {
        doc = json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw ConfigInvalid({"config: " + path.string() + ": " + e.what()});
    }
    return parse_config(doc, path.parent_path());
}

/// The instance for a file/random/deterministic spec, or the fixed-key instance.
inline TabularMdp load_instance(const InstanceSpec& in) {
    if (in.type == "file") {
        try {
            return io::read_mdp(in.path);
        } catch (const std::exception& e) {
            throw ConfigInvalid({std::string("instance.path: ") + e.what()});
        }
    }
    if (in.type == "random") return random_mdp(in.states, in.actions, in.horizon, in.seed, in.concentration);
    if (in.type == "deterministic") return random_deterministic_mdp(in.states, in.actions, in.horizon, in.seed);
    if (in.key.empty()) return make_key_dynamics(in.horizon, in.actions, in.seed).mdp;
    return make_key_dynamics(in.horizon, in.actions, in.key).mdp;
}

inline json resolved_json(const ExperimentConfig& c) {
    json in = {{"type", c.instance.type}};
    if (c.instance.type == "file") {
        in["path"] = c.instance.path.string();
    } else {
        in["states"] = c.instance.states;
        in["actions"] = c.instance.actions;
        in["horizon"] = c.instance.horizon;
        in["seed"] = c.instance.seed;
        if (c.instance.type == "random") in["concentration"] = c.instance.concentration;
        if (c.instance.type == "key") {
            in["key"] = c.instance.key;
            in["all_keys"] = c.instance.all_keys;
        }
    }
    json alg = json::object();
    switch (c.kind) {
        case Kind::marfe: alg = {{"m", c.m}}; break;
        case Kind::naive: alg = {{"m", c.m}, {"threshold", c.threshold}}; break;
        case Kind::uniform: alg = {{"m", c.m}, {"rho", c.rho}}; break;
        case Kind::survivors: alg = {{"m", c.m}, {"rho", c.rho}, {"learner", c.learner}}; break;
        case Kind::grid: alg = {{"ms", c.ms}, {"rhos", c.rhos}, {"learner", c.learner}}; break;
        case Kind::invariants: alg = {{"m", c.m}}; break;
    }
    if (c.beta) {
        alg["beta"] = *c.beta;
        if (c.instance.horizon) alg["alpha"] = *c.beta / (3.0 * static_cast<double>(c.instance.horizon));
    }
    json ev = {{"epsilon", c.epsilon}, {"delta", c.delta}, {"rewards", c.rewards}, {"policies", c.policies}};
    if (c.kind == Kind::survivors || c.kind == Kind::grid) ev["trials"] = c.trials;
    if (c.kind == Kind::invariants) {
        ev["runs"] = c.runs;
        ev["contraction_pairs"] = c.contraction_pairs;
        ev["required_fraction"] = c.required_fraction;
        ev["survivor_m"] = c.survivor_m;
        ev["survivor_keys"] = c.survivor_keys;
    }
    return {{"kind", kind_name(c.kind)}, {"seed", c.seed},      {"instance", in},
            {"algorithm", alg},         {"evaluation", ev},     {"output", c.output.string()},
            {"dump_phase_logs", c.dump_phase_logs}, {"output_long_format", c.long_format}};
}

struct RunOutcome {
    std::vector<std::string> files;  ///< relative to the output directory, manifest last
    json summary = json::object();
};

namespace detail {

inline void write_text(const std::filesystem::path& dir, const std::string& name, const std::string& text,
                       RunOutcome& out) {
    io::detail::write_file(dir / name, text);
    out.files.push_back(name);
}

template <class Fn>
std::string table(Fn&& fn) {
    std::ostringstream os;
    fn(os);
    return os.str();
}

inline ExplorerFactory learner_factory(const ExperimentConfig& c) {
    if (c.learner == "exhaustive") return exhaustive_single_phase(c.instance.horizon, c.instance.actions);
    if (c.learner == "marfe") {
        const double beta = *c.beta;
        return [beta] { return std::make_unique<MarfeExplorer>(beta); };
    }
    return uniform_key_agents();
}

inline void write_protocol_outputs(const ExperimentConfig& c, const TabularMdp& mdp, const ProtocolResult& res,
                                   const std::filesystem::path& dir, RunOutcome& out) {
    const auto batch = in_module("eval_harness", [&] {
        return make_reward_batch(mdp.num_states(), mdp.num_actions(), mdp.horizon(), c.rewards,
                                 RngPlan(c.seed).stream_seed(2, 0));
    });
    const GapReport rep = in_module("eval_harness", [&] { return reward_free_gap(mdp, res.estimate, batch); });
    write_text(dir, "estimate.json", io::estimate_to_string(res.estimate), out);
    write_text(dir, "gap_report.csv", table([&](std::ostream& os) { rep.write_table(os); }), out);
    if (c.dump_phase_logs)
        for (std::size_t i = 0; i < res.phases.size(); ++i)
            write_text(dir, "phase_logs/phase_" + std::to_string(i) + ".json", io::phase_log_to_string(res.phases[i]),
                       out);
    std::size_t active = 0;
    for (const auto& s : res.estimate.active_sets) active += s.size();
    out.summary = {{"max_gap", rep.max_gap},
                   {"mean_gap", rep.mean_gap},
                   {"epsilon", c.epsilon},
                   {"within_epsilon", rep.max_gap <= c.epsilon},
                   {"rewards_evaluated", rep.gaps.size()},
                   {"phases", res.phases.size()},
                   {"active_state_steps", active},
                   {"zero_visit_warnings", res.estimate.warnings.size()}};
}

inline std::string utc_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace detail

/// Runs the experiment and writes its artifacts under c.output. Result tables
/// depend only on the config and seed; only the manifest carries a timestamp.
inline RunOutcome run_experiment(const ExperimentConfig& config, unsigned threads = 1) {
    ExperimentConfig c = config;
    std::optional<TabularMdp> loaded;
    if (c.kind != Kind::survivors && c.kind != Kind::grid) {
        loaded = in_module("mdp_core", [&] { return load_instance(c.instance); });
        c.instance.states = loaded->num_states();
        c.instance.actions = loaded->num_actions();
        c.instance.horizon = loaded->horizon();
        if (!c.beta && (c.kind == Kind::marfe || c.kind == Kind::invariants))
            c.beta = MarfeConfig::beta_for(c.epsilon, c.instance.states, c.instance.horizon);
        if (c.kind == Kind::uniform && c.rho == 0) c.rho = c.instance.horizon;
    }
    RunOutcome out;
    const std::filesystem::path dir = c.output;
    std::filesystem::create_directories(dir);
    const RngPlan plan(c.seed);
    const std::uint64_t run_seed = plan.master_seed();

    switch (c.kind) {
        case Kind::marfe:
        case Kind::naive:
        case Kind::uniform: {
            const TabularMdp& mdp = *loaded;
            const ProtocolResult res = in_module(c.kind == Kind::marfe ? "marfe" : "baselines", [&] {
                if (c.kind == Kind::marfe) return run_marfe(mdp, MarfeConfig{c.m, *c.beta, c.delta, run_seed, threads});
                if (c.kind == Kind::naive) return run_naive(mdp, NaiveConfig{c.m, c.threshold, run_seed, threads});
                return run_uniform(mdp, c.m, c.rho, run_seed, threads);
            });
            detail::write_protocol_outputs(c, mdp, res, dir, out);
            break;
        }
        case Kind::survivors: {
            const SurvivorCurve curve = in_module("keydyn", [&] {
                const auto factory = detail::learner_factory(c);
                if (c.instance.all_keys) {
                    const auto keys = all_keys(c.instance.horizon, c.instance.actions);
                    return survivor_experiment(factory, keys, c.instance.actions, c.rho, c.m, run_seed, true, threads);
                }
                if (!c.instance.key.empty()) {
                    const std::vector<std::vector<ActionIndex>> keys{c.instance.key};
                    return survivor_experiment(factory, keys, c.instance.actions, c.rho, c.m, run_seed, true, threads);
                }
                return survivor_experiment(factory, c.instance.horizon, c.instance.actions, c.rho, c.m, c.trials,
                                           run_seed, threads);
            });
            detail::write_text(dir, "survivors.csv", detail::table([&](std::ostream& os) { curve.write_summary(os); }), out);
            if (c.long_format)
                detail::write_text(dir, "survivors_long.csv",
                                   detail::table([&](std::ostream& os) { curve.write_long(os); }), out);
            const std::size_t last = c.instance.horizon - 1;
            out.summary = {{"trials", curve.trials()},
                           {"mean_final_survivors", curve.mean(c.rho - 1, c.instance.horizon)},
                           {"empty_fraction_h_minus_1", curve.empty_fraction(c.rho - 1, last)},
                           {"monotone", curve.monotone()}};
            break;
        }
        case Kind::grid: {
            const auto rows = in_module("keydyn", [&] {
                return value_gap_vs_phase_budget(c.rhos, c.ms, c.instance.actions, c.instance.horizon, c.trials,
                                                 run_seed, detail::learner_factory(c), threads);
            });
            detail::write_text(dir, "grid.csv", detail::table([&](std::ostream& os) { write_grid(os, rows); }), out);
            json cells = json::array();
            for (const auto& r : rows) cells.push_back({{"rho", r.rho}, {"m", r.m}, {"failure_rate", r.failure_rate}});
            out.summary = {{"cells", cells}};
            break;
        }
        case Kind::invariants: {
            const TabularMdp& mdp = *loaded;
            auto results = in_module("eval_harness", [&] {
                InvariantSuiteConfig ic;
                ic.m = c.m;
                ic.beta = *c.beta;
                ic.runs = c.runs;
                ic.required_fraction = c.required_fraction;
                ic.policies = c.policies;
                ic.rewards = c.rewards;
                ic.contraction_pairs = c.contraction_pairs;
                ic.seed = run_seed;
                ic.threads = threads;
                return run_invariant_suite(mdp, ic);
            });
            if (c.survivor_m > 0) {
                results.push_back(in_module("keydyn", [&] {
                    const std::size_t keys = c.survivor_keys ? c.survivor_keys : 50;
                    const auto curve = survivor_experiment(uniform_key_agents(), mdp.horizon(), mdp.num_actions(), 1,
                                                           c.survivor_m, keys, run_seed, threads);
                    return check_survivor_monotonicity(curve);
                }));
            }
            detail::write_text(dir, "invariants.csv",
                               detail::table([&](std::ostream& os) { write_invariants(os, results); }), out);
            bool all = true;
            json names = json::object();
            for (const auto& r : results) {
                names[r.name] = r.passed;
                all = all && r.passed;
            }
            out.summary = {{"all_passed", all}, {"invariants", names}};
            break;
        }
    }

    json manifest = {{"format", kManifestFormat},
                     {"created_at", detail::utc_timestamp()},
                     {"config", resolved_json(c)},
                     {"seeds", {{"master", c.seed}, {"instance", c.instance.seed}}},
                     {"threads", threads},
                     {"versions",
                      {{"marfe", kVersion},
                       {"compiler", __VERSION__},
                       {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                             std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                             std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
                     {"files", out.files},
                     {"summary", out.summary}};
    detail::write_text(dir, "manifest.json", manifest.dump(2) + "\n", out);
    return out;
}

} // namespace marfe::exp
