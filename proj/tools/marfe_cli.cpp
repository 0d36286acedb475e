// marfe: command-line front end for the experiments.
//
//   marfe run --config cfg.json [--seed N] [--out DIR] [--threads N] [--quiet]
//   marfe bound --states S --actions A --horizon H --epsilon E --delta D
//   marfe gen-mdp --states S --actions A --horizon H [--seed N] [--out FILE]
//   marfe gen-key --horizon H --actions A [--seed N | --key 0,1,..] [--out FILE]
//   marfe validate (--config FILE | --mdp FILE | --estimate FILE)
//
// Exit codes: 0 ok, 2 config error, 3 runtime error. Errors are printed to
// stderr as one JSON object.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include <marfe/experiment.hpp>

namespace {

using nlohmann::json;
using namespace marfe;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

int report_config_error(const std::vector<std::string>& violations) {
    json err = {{"status", "error"}, {"kind", "config"}, {"exit_code", kExitConfig}, {"violations", violations}};
    std::cerr << err.dump() << '\n';
    return kExitConfig;
}

int report_runtime_error(const std::string& module, const std::string& message) {
    json err = {{"status", "error"}, {"kind", "runtime"}, {"exit_code", kExitRuntime}, {"module", module},
                {"message", message}};
    std::cerr << err.dump() << '\n';
    return kExitRuntime;
}

/// --threads wins, then MARFE_THREADS, then 1.
unsigned resolve_threads(std::optional<unsigned> flag) {
    if (flag) return std::max(1u, *flag);
    if (const char* env = std::getenv("MARFE_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<unsigned>(v);
        } catch (const std::exception&) {
        }
        throw exp::ConfigInvalid({"MARFE_THREADS: expected a positive integer, got \"" + std::string(env) + "\""});
    }
    return 1;
}

std::vector<ActionIndex> parse_key(const std::string& text) {
    std::vector<ActionIndex> key;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const long v = std::stol(item, &used);
            if (v < 0 || used != item.size()) throw std::invalid_argument(item);
            key.push_back(static_cast<ActionIndex>(v));
        } catch (const std::exception&) {
            throw exp::ConfigInvalid({"--key: \"" + item + "\" is not a non-negative integer"});
        }
    }
    return key;
}

void emit(const std::string& text, const std::string& out) {
    if (out.empty() || out == "-") {
        std::cout << text;
    } else {
        io::detail::write_file(out, text);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-agent reward-free exploration experiments"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("--quiet,-q", quiet, "Suppress the summary on stdout");

    // run
    auto* run = app.add_subcommand("run", "Run an experiment described by a JSON config");
    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::string> out_override;
    std::optional<unsigned> threads_flag;
    run->add_option("--config,-c", config_path, "Experiment config (JSON)")->required();
    run->add_option("--seed", seed_override, "Override the config seed");
    run->add_option("--out,-o", out_override, "Override the output directory");
    run->add_option("--threads,-j", threads_flag, "Worker threads (default: MARFE_THREADS or 1)");

    // bound
    auto* bound = app.add_subcommand("bound", "Print beta, the agent-count bound and a desk-scale m");
    std::size_t bS = 0, bA = 0, bH = 0;
    double b_eps = 0.0, b_delta = 0.0;
    bound->add_option("--states,-S", bS)->required();
    bound->add_option("--actions,-A", bA)->required();
    bound->add_option("--horizon,-H", bH)->required();
    bound->add_option("--epsilon", b_eps)->required();
    bound->add_option("--delta", b_delta)->required();

    // gen-mdp
    auto* gen_mdp = app.add_subcommand("gen-mdp", "Write a random tabular MDP");
    std::size_t gS = 0, gA = 0, gH = 0;
    std::uint64_t g_seed = 0;
    double g_conc = 1.0;
    bool g_det = false;
    std::string g_out;
    gen_mdp->add_option("--states,-S", gS)->required();
    gen_mdp->add_option("--actions,-A", gA)->required();
    gen_mdp->add_option("--horizon,-H", gH)->required();
    gen_mdp->add_option("--seed", g_seed);
    gen_mdp->add_option("--concentration", g_conc, "Dirichlet concentration");
    gen_mdp->add_flag("--deterministic", g_det, "One-hot rows");
    gen_mdp->add_option("--out,-o", g_out, "Output file (default stdout)");

    // gen-key
    auto* gen_key = app.add_subcommand("gen-key", "Write a key-dynamics instance");
    std::size_t kA = 0, kH = 0;
    std::uint64_t k_seed = 0;
    std::string k_key, k_out;
    gen_key->add_option("--horizon,-H", kH)->required();
    gen_key->add_option("--actions,-A", kA)->required();
    gen_key->add_option("--seed", k_seed, "Seed for a random key");
    gen_key->add_option("--key", k_key, "Explicit key, comma separated");
    gen_key->add_option("--out,-o", k_out, "Output file (default stdout)");

    // validate
    auto* validate = app.add_subcommand("validate", "Check a config, MDP or estimate file");
    std::string v_config, v_mdp, v_estimate;
    auto* vc = validate->add_option("--config,-c", v_config);
    auto* vm = validate->add_option("--mdp", v_mdp);
    auto* ve = validate->add_option("--estimate", v_estimate);
    vc->excludes(vm)->excludes(ve);
    vm->excludes(ve);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return report_config_error({std::string("arguments: ") + e.what()});
    }

    try {
        if (*run) {
            auto cfg = exp::load_config(config_path);
            if (seed_override) exp::override_seed(cfg, *seed_override);
            if (out_override) cfg.output = *out_override;
            const unsigned threads = resolve_threads(threads_flag);
            const auto outcome = exp::run_experiment(cfg, threads);
            if (!quiet) {
                json s = {{"status", "ok"},
                          {"kind", exp::kind_name(cfg.kind)},
                          {"output", cfg.output.string()},
                          {"files", outcome.files},
                          {"summary", outcome.summary}};
                std::cout << s.dump(2) << '\n';
            }
        } else if (*bound) {
            const auto b = exp::in_module("marfe", [&] { return agent_bound(bS, bA, bH, b_eps, b_delta); });
            const double beta = MarfeConfig::beta_for(b_eps, bS, bH);
            json s = {{"beta", beta},
                      {"alpha", beta / (3.0 * static_cast<double>(bH))},
                      {"m_bound", b.m},
                      {"delta_prime", b.delta_prime},
                      {"supp", b.supp},
                      {"m_desk", exp::desk_agent_count(bS, bA, bH, b_eps, b_delta)},
                      {"desk_constant", exp::kDeskConstant}};
            std::cout << s.dump(2) << '\n';
        } else if (*gen_mdp) {
            const auto mdp = exp::in_module("mdp_core", [&] {
                return g_det ? random_deterministic_mdp(gS, gA, gH, g_seed) : random_mdp(gS, gA, gH, g_seed, g_conc);
            });
            emit(io::mdp_to_string(mdp), g_out);
        } else if (*gen_key) {
            const auto inst = exp::in_module("keydyn", [&] {
                return k_key.empty() ? make_key_dynamics(kH, kA, k_seed) : make_key_dynamics(kH, kA, parse_key(k_key));
            });
            emit(io::mdp_to_string(inst.mdp), k_out);
            if (!quiet && !k_out.empty()) std::cout << json({{"key", inst.key}}).dump() << '\n';
        } else if (*validate) {
            json s = {{"status", "ok"}};
            if (!v_config.empty()) {
                const auto cfg = exp::load_config(v_config);
                if (cfg.instance.type == "file") exp::load_instance(cfg.instance);
                s["config"] = exp::resolved_json(cfg);
            } else if (!v_mdp.empty()) {
                const auto mdp = exp::in_module("mdp_core", [&] {
                    try {
                        return io::read_mdp(v_mdp);
                    } catch (const ParseError& e) {
                        throw exp::ConfigInvalid({e.what()});
                    } catch (const InvariantError& e) {
                        throw exp::ConfigInvalid({e.what()});
                    }
                });
                s["mdp"] = {{"states", mdp.num_states()}, {"actions", mdp.num_actions()}, {"horizon", mdp.horizon()}};
            } else if (!v_estimate.empty()) {
                const auto est = exp::in_module("marfe", [&] {
                    try {
                        return io::read_estimate(v_estimate);
                    } catch (const ParseError& e) {
                        throw exp::ConfigInvalid({e.what()});
                    } catch (const InvariantError& e) {
                        throw exp::ConfigInvalid({e.what()});
                    }
                });
                s["estimate"] = {{"states", est.num_real_states()}, {"warnings", est.warnings.size()}};
            } else {
                return report_config_error({"validate: pass one of --config, --mdp, --estimate"});
            }
            if (!quiet) std::cout << s.dump(2) << '\n';
        }
    } catch (const exp::ConfigInvalid& e) {
        return report_config_error(e.violations);
    } catch (const ConfigError& e) {
        return report_config_error({e.what()});
    } catch (const DimensionError& e) {
        return report_config_error({e.what()});
    } catch (const exp::ModuleError& e) {
        return report_runtime_error(e.module, e.what());
    } catch (const std::exception& e) {
        return report_runtime_error("cli", e.what());
    }
    return kExitOk;
}
