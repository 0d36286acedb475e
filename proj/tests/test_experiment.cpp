#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <marfe/experiment.hpp>

using namespace marfe;
using exp::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> violations_of(const json& doc) {
    try {
        exp::parse_config(doc);
    } catch (const exp::ConfigInvalid& e) {
        return e.violations;
    }
    return {};
}

} // namespace

TEST(Bound, BetaIsExactAndHalvesWithEpsilon) {
    for (double eps : {0.5, 0.25, 0.1}) {
        EXPECT_EQ(MarfeConfig::beta_for(eps, 4, 4), eps / (2.0 * 16.0 * 4.0));
        EXPECT_EQ(MarfeConfig::beta_for(eps / 2, 4, 4), MarfeConfig::beta_for(eps, 4, 4) / 2);
    }
}

TEST(Bound, DeskCountNeverExceedsTheBound) {
    for (std::size_t S : {1, 2, 4, 8})
        for (std::size_t H : {1, 3, 6})
            for (double eps : {0.9, 0.25, 0.01}) {
                EXPECT_LE(exp::desk_agent_count(S, 2, H, eps, 0.1), agent_bound(S, 2, H, eps, 0.1).m);
            }
    EXPECT_EQ(exp::desk_agent_count(4, 2, 4, 0.25, 0.1), 102400.0);
}

TEST(Config, EveryViolationIsListed) {
    const json doc = {{"kind", "marfe"},
                      {"instance", {{"type", "random"}, {"states", 0}, {"actions", 2}}},
                      {"evaluation", {{"epsilon", 1.5}}}};
    const auto v = violations_of(doc);
    ASSERT_EQ(v.size(), 4u);
    EXPECT_EQ(v[0], "instance.states: must be >= 1");
    EXPECT_EQ(v[1], "instance.horizon: missing field");
    EXPECT_EQ(v[2], "evaluation.epsilon: must lie in (0, 1)");
    EXPECT_EQ(v[3], "algorithm.m: missing field");
}

TEST(Config, KindSpecificFields) {
    const json key = {{"type", "key"}, {"horizon", 3}, {"actions", 2}};
    EXPECT_EQ(violations_of({{"kind", "lower-bound-grid"}, {"instance", key}}),
              std::vector<std::string>{"algorithm.ms: missing field"});
    EXPECT_EQ(violations_of({{"kind", "lower-bound-survivors"},
                             {"instance", {{"type", "random"}, {"states", 2}, {"actions", 2}, {"horizon", 3}}},
                             {"algorithm", {{"m", 4}}}}),
              std::vector<std::string>{"instance.type: lower-bound experiments need a key instance"});
    EXPECT_EQ(violations_of({{"kind", "lower-bound-survivors"}, {"instance", key},
                             {"algorithm", {{"m", 4}, {"learner", "marfe"}, {"beta", 0.1}}}}),
              std::vector<std::string>{"algorithm.rho: the marfe learner runs exactly H=3 phases"});
    EXPECT_FALSE(violations_of({{"kind", "q-learning"}, {"instance", key}}).empty());
}

TEST(Config, Defaults) {
    const auto c = exp::parse_config({{"kind", "naive"},
                                      {"seed", 4},
                                      {"instance", {{"type", "random"}, {"states", 3}, {"actions", 2}, {"horizon", 2}}},
                                      {"algorithm", {{"m", 60}}},
                                      {"evaluation", {{"epsilon", 0.2}}}});
    EXPECT_EQ(c.threshold, 25u);
    EXPECT_EQ(c.instance.seed, 4u);
    const auto m = exp::parse_config({{"kind", "marfe"},
                                      {"instance", {{"type", "random"}, {"states", 3}, {"actions", 2}, {"horizon", 2}}},
                                      {"algorithm", {{"m", 60}}}});
    ASSERT_TRUE(m.beta.has_value());
    EXPECT_EQ(*m.beta, MarfeConfig::beta_for(0.25, 3, 2));
}

TEST(Experiment, RerunIsByteIdentical) {
    const auto dir = std::filesystem::temp_directory_path() / "marfe_exp_test";
    std::filesystem::remove_all(dir);
    const json base = {{"kind", "marfe"},
                       {"seed", 3},
                       {"instance", {{"type", "random"}, {"states", 3}, {"actions", 2}, {"horizon", 3}}},
                       {"algorithm", {{"m", 300}}},
                       {"evaluation", {{"rewards", 5}}}};
    auto a = exp::parse_config(base);
    a.output = dir / "a";
    auto b = a;
    b.output = dir / "b";
    const auto out_a = exp::run_experiment(a);
    exp::run_experiment(b, 3);
    for (const auto& f : out_a.files) {
        if (f == "manifest.json") continue;
        EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    }
    auto c = a;
    exp::override_seed(c, 4);
    c.output = dir / "c";
    exp::run_experiment(c);
    EXPECT_NE(slurp(dir / "a" / "estimate.json"), slurp(dir / "c" / "estimate.json"));
    const json manifest = json::parse(slurp(dir / "a" / "manifest.json"));
    EXPECT_EQ(manifest["config"]["algorithm"]["m"], 300);
    EXPECT_EQ(manifest["seeds"]["master"], 3);
    std::filesystem::remove_all(dir);
}
