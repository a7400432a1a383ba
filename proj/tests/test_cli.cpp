#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "popdyn/cli/app.hpp"

using namespace popdyn;
using namespace popdyn::cli;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "popdyn_cli");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_app(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("popdyn_cli_test_" + name);
    fs::remove_all(p);
    return p;
}

/// Sets an environment variable for the lifetime of the object.
struct ScopedEnv {
    std::string name;
    ScopedEnv(std::string n, const char* v) : name(std::move(n)) { ::setenv(name.c_str(), v, 1); }
    ~ScopedEnv() { ::unsetenv(name.c_str()); }
};

const Schema& linear_schema() {
    static const Schema s = experiments::find("bd-extinction-linear")->schema();
    return s;
}

}  // namespace

TEST(ConfigParser, SectionsCommentsAndWhitespace) {
    const auto e = parse_config_text("# header\n[run]\n  seed = 7  \n; other comment\n\n[bd]\nlambda=2.5\n");
    ASSERT_EQ(e.size(), 2u);
    EXPECT_EQ(e[0].key, "run.seed");
    EXPECT_EQ(e[0].value, "7");
    EXPECT_EQ(e[1].key, "bd.lambda");
    EXPECT_EQ(e[1].value, "2.5");
    EXPECT_EQ(e[1].origin, "<text>:7");
}

TEST(ConfigParser, RejectsMalformedInput) {
    EXPECT_THROW(parse_config_text("seed = 1\n"), ConfigError);
    EXPECT_THROW(parse_config_text("[run]\nseed = 1\nseed = 2\n"), ConfigError);
    EXPECT_THROW(parse_config_text("[run\nseed = 1\n"), ConfigError);
    EXPECT_THROW(parse_config_text("[run]\nseed\n"), ConfigError);
    EXPECT_THROW(parse_config_text("[run]\nbad key = 1\n"), ConfigError);
    try {
        parse_config_text("[run]\nseed = 1\n\nseed = 2\n", "f.cfg");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("f.cfg:4"), std::string::npos) << e.what();
    }
}

TEST(ConfigResolve, TypesRangesAndUnknownKeys) {
    const auto& s = linear_schema();
    EXPECT_THROW(resolve(s, {{{"bd.nope", "1", "t"}}}), ConfigError);
    EXPECT_THROW(resolve(s, {{{"run.replicates", "0", "t"}}}), ConfigError);
    EXPECT_THROW(resolve(s, {{{"run.replicates", "-3", "t"}}}), ConfigError);
    EXPECT_THROW(resolve(s, {{{"run.replicates", "2.5", "t"}}}), ConfigError);
    EXPECT_THROW(resolve(s, {{{"bd.lambda", "abc", "t"}}}), ConfigError);
    EXPECT_THROW(resolve(s, {{{"bd.lambda", "nan", "t"}}}), ConfigError);
    EXPECT_THROW(resolve(s, {{{"bd.mu", "-1", "t"}}}), ConfigError);
    EXPECT_THROW(resolve(s, {{{"run.out", "", "t"}}}), ConfigError);
    const auto c = resolve(s, {});
    EXPECT_EQ(c.count("run.seed"), 20240601u);
    EXPECT_DOUBLE_EQ(c.real("bd.lambda"), 1.5);
    EXPECT_THROW(c.count("bd.lambda"), ConfigError);
}

TEST(ConfigResolve, LaterLayersWin) {
    const auto& s = linear_schema();
    const auto c = resolve(s, {{{"bd.mu", "0.5", "file"}, {"bd.z0", "4", "file"}}, {{"bd.mu", "0.25", "env"}}});
    EXPECT_DOUBLE_EQ(c.real("bd.mu"), 0.25);
    EXPECT_EQ(c.count("bd.z0"), 4u);
}

TEST(ConfigEnv, NamesAndOverrides) {
    EXPECT_EQ(env_name("bd.stop_above"), "POPDYN_BD_STOP_ABOVE");
    EXPECT_EQ(env_name("run.seed"), "POPDYN_RUN_SEED");
    ScopedEnv env("POPDYN_BD_MU", " 0.75 ");
    const auto o = env_overrides(linear_schema());
    ASSERT_EQ(o.size(), 1u);
    EXPECT_EQ(o[0].key, "bd.mu");
    EXPECT_EQ(o[0].value, "0.75");
    const auto r = run({"validate", "bd-extinction-linear"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("mu = 0.75"), std::string::npos);
    const auto f = run({"validate", "bd-extinction-linear", "--set", "bd.mu=0.5"});
    EXPECT_NE(f.out.find("mu = 0.5\n"), std::string::npos);
}

TEST(Registry, CompleteAndRoundTrips) {
    const auto& reg = experiments::registry();
    ASSERT_EQ(reg.size(), 11u);
    std::set<std::string> ids;
    for (std::size_t i = 0; i < reg.size(); ++i) {
        const auto& e = reg[i];
        EXPECT_EQ(e.criterion, static_cast<int>(i + 1));
        EXPECT_TRUE(ids.insert(e.id).second) << e.id;
        EXPECT_EQ(experiments::find(e.id), &e);
        const auto schema = e.schema();
        const auto cfg = experiments::resolve_config(e, {});
        const auto text = render_config(schema, cfg);
        const auto again = experiments::resolve_config(e, {parse_config_text(text)});
        EXPECT_EQ(cfg.canonical(), again.canonical()) << e.id;
        EXPECT_EQ(experiments::result_hash(cfg), experiments::result_hash(again));
    }
    EXPECT_EQ(experiments::find("nope"), nullptr);
}

TEST(Registry, HashIgnoresOutputDirectory) {
    const auto& e = *experiments::find("bd-extinction-linear");
    const auto a = experiments::resolve_config(e, {{{"run.out", "x", "t"}}});
    const auto b = experiments::resolve_config(e, {{{"run.out", "y", "t"}}});
    const auto c = experiments::resolve_config(e, {{{"run.seed", "1", "t"}}});
    EXPECT_EQ(experiments::result_hash(a), experiments::result_hash(b));
    EXPECT_NE(experiments::result_hash(a), experiments::result_hash(c));
    EXPECT_THROW(experiments::resolve_config(e, {{{"run.experiment", "scaling-deterministic-limit", "t"}}}), ConfigError);
}

TEST(Report, CsvFormatting) {
    EXPECT_EQ(fmt(0.1), "0.10000000000000001");
    EXPECT_EQ(fmt(std::numeric_limits<double>::quiet_NaN()), "");
    EXPECT_EQ(fmt(-std::numeric_limits<double>::infinity()), "-inf");
    EXPECT_EQ(csv_escape("plain"), "plain");
    EXPECT_EQ(csv_escape("a,b"), "\"a,b\"");
    EXPECT_EQ(csv_escape("say \"hi\""), "\"say \"\"hi\"\"\"");
    Table t{"t", {"a", "b"}, {}};
    t.add({"1", "x,y"});
    EXPECT_THROW(t.add({"1"}), std::logic_error);
    EXPECT_EQ(t.to_csv(), "a,b\n1,\"x,y\"\n");
}

TEST(App, ListAndUsageErrors) {
    const auto l = run({"list"});
    EXPECT_EQ(l.code, exit_pass);
    EXPECT_NE(l.out.find("bd-extinction-linear\tcriterion 1"), std::string::npos);
    EXPECT_EQ(run({}).code, exit_usage);
    EXPECT_EQ(run({"bogus"}).code, exit_usage);
    EXPECT_EQ(run({"run", "no-such-experiment"}).code, exit_usage);
    EXPECT_EQ(run({"run", "bd-extinction-linear", "--replicates", "0"}).code, exit_usage);
    EXPECT_EQ(run({"run", "bd-extinction-linear", "--set", "bd.lambda"}).code, exit_usage);
    EXPECT_EQ(run({"validate", "bd-extinction-linear", "--config", "/nonexistent/x.cfg"}).code, exit_usage);
    EXPECT_EQ(run({"--threads", "0", "list"}).code, exit_usage);
    {
        ScopedEnv env("POPDYN_THREADS", "many");
        EXPECT_EQ(run({"list"}).code, exit_usage);
    }
}

TEST(App, ConfigFileNamesExperiment) {
    const auto dir = scratch("cfg");
    fs::create_directories(dir);
    std::ofstream(dir / "a.cfg") << "[run]\nexperiment = bd-extinction-linear\nseed = 5\n";
    const auto r = run({"validate", "--config", (dir / "a.cfg").string()});
    EXPECT_EQ(r.code, exit_pass) << r.err;
    EXPECT_NE(r.out.find("seed = 5\n"), std::string::npos);
    std::ofstream(dir / "b.cfg") << "[run]\nseed = 5\n";
    EXPECT_EQ(run({"validate", "--config", (dir / "b.cfg").string()}).code, exit_usage);
    fs::remove_all(dir);
}

TEST(App, RunWritesArtifactsIndependentOfThreads) {
    const auto d1 = scratch("t1"), d4 = scratch("t4");
    const auto a = run({"run", "bd-extinction-linear", "--replicates", "3000", "--out", d1.string()});
    const auto b =
        run({"--threads", "4", "run", "bd-extinction-linear", "--replicates", "3000", "--out", d4.string()});
    EXPECT_EQ(a.code, exit_pass) << a.err;
    EXPECT_EQ(b.code, exit_pass) << b.err;
    for (const char* f : {"report.csv", "provenance.csv", "extinction.csv"}) {
        const auto x = slurp(d1 / f), y = slurp(d4 / f);
        EXPECT_FALSE(x.empty()) << f;
        EXPECT_EQ(x, y) << f;
        EXPECT_EQ(x.find('\r'), std::string::npos) << f;
        EXPECT_EQ(x.back(), '\n') << f;
    }
    EXPECT_EQ(slurp(d1 / "report.csv").rfind("check_id,target,estimate,stderr,verdict\n", 0), 0u);
    fs::remove_all(d1);
    fs::remove_all(d4);
}

TEST(App, FailedCheckAndRuntimeErrorExitWithOne) {
    const auto d = scratch("fail");
    const auto f = run({"run", "bd-extinction-linear", "--replicates", "200", "--set", "run.horizon=1e-6", "--out",
                        d.string()});
    EXPECT_EQ(f.code, exit_check_failure);
    EXPECT_NE(f.out.find("FAIL  mc_frequency"), std::string::npos);
    EXPECT_NE(slurp(d / "report.csv").find(",fail\n"), std::string::npos);
    // An output path that is a regular file cannot become a directory.
    const auto blocker = scratch("blocker");
    std::ofstream(blocker) << "x";
    const auto e = run({"run", "bd-extinction-linear", "--replicates", "200", "--out", (blocker / "sub").string()});
    EXPECT_EQ(e.code, exit_check_failure);
    EXPECT_NE(e.err.find("error: bd-extinction-linear"), std::string::npos);
    fs::remove_all(d);
    fs::remove(blocker);
}
