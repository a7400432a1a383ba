#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "../experiments.hpp"

namespace popdyn::cli {

enum ExitCode : int { exit_pass = 0, exit_check_failure = 1, exit_usage = 2 };

struct CommonArgs {
    std::string id;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> replicates;
    std::optional<std::string> out;
    std::vector<std::string> sets;
};

namespace detail {

inline void add_common(CLI::App* sub, CommonArgs& a) {
    sub->add_option("experiment", a.id, "experiment id (see 'list'); optional when the config names it");
    sub->add_option("--config", a.config_path, "config file in the sectioned key = value format");
    sub->add_option("--seed", a.seed, "base seed (overrides run.seed)");
    sub->add_option("--replicates", a.replicates, "replicate count (overrides run.replicates)");
    sub->add_option("--out", a.out, "output directory (overrides run.out)");
    sub->add_option("--set", a.sets, "extra override section.key=value, repeatable");
}

/// Experiment and fully resolved config: defaults < file < environment < flags.
inline std::pair<const experiments::Experiment*, Config> prepare(const CommonArgs& a) {
    std::vector<Entry> file;
    if (!a.config_path.empty()) file = load_config_file(a.config_path);
    std::string id = a.id;
    if (id.empty()) {
        for (const auto& e : file)
            if (e.key == "run.experiment") id = e.value;
        if (const char* v = std::getenv(env_name("run.experiment").c_str()); id.empty() && v) id = v;
    }
    if (id.empty()) throw ConfigError("no experiment given: pass an id or set run.experiment in the config");
    const auto* exp = experiments::find(id);
    if (!exp) throw ConfigError("unknown experiment '" + id + "' (see 'list')");
    std::vector<Entry> flags;
    if (!a.id.empty()) flags.push_back({"run.experiment", a.id, "argument"});
    if (a.seed) flags.push_back({"run.seed", std::to_string(*a.seed), "--seed"});
    if (a.replicates) flags.push_back({"run.replicates", std::to_string(*a.replicates), "--replicates"});
    if (a.out) flags.push_back({"run.out", *a.out, "--out"});
    for (const auto& s : a.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
        flags.push_back({s.substr(0, eq), s.substr(eq + 1), "--set"});
    }
    // A file entry naming another experiment is caught by resolve_config unless the argument overrides it.
    Config cfg = experiments::resolve_config(*exp, {file, env_overrides(exp->schema()), flags});
    return {exp, std::move(cfg)};
}

}  // namespace detail

/// Entry point shared by the executable and the tests. Returns the process exit code.
inline int run_app(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Monte-Carlo experiments for stochastic population models"};
    app.require_subcommand(1);
    unsigned threads = 1;
    if (const char* v = std::getenv("POPDYN_THREADS")) {
        try {
            threads = static_cast<unsigned>(std::stoul(v));
        } catch (const std::exception&) {
            err << "error: POPDYN_THREADS must be a positive integer\n";
            return exit_usage;
        }
    }
    app.add_option("--threads", threads, "worker threads (results do not depend on it)")
        ->check(CLI::Range(1u, 1024u));

    auto* list = app.add_subcommand("list", "list registered experiments");
    CommonArgs run_args, val_args;
    auto* run = app.add_subcommand("run", "run an experiment and write its CSV artifacts");
    detail::add_common(run, run_args);
    run->add_option("--threads", threads, "worker threads (results do not depend on it)")->check(CLI::Range(1u, 1024u));
    auto* validate = app.add_subcommand("validate", "check a config and print it fully resolved");
    detail::add_common(validate, val_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return exit_pass;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help(e.get_name());
            return exit_pass;
        }
        err << "error: " << e.what() << "\n" << app.help();
        return exit_usage;
    }
    if (threads == 0) threads = 1;

    if (list->parsed()) {
        for (const auto& e : experiments::registry())
            out << e.id << "\tcriterion " << e.criterion << "\t" << e.description << "\n";
        return exit_pass;
    }

    const CommonArgs& a = run->parsed() ? run_args : val_args;
    const experiments::Experiment* exp = nullptr;
    Config cfg;
    try {
        std::tie(exp, cfg) = detail::prepare(a);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_usage;
    }

    if (validate->parsed()) {
        out << render_config(exp->schema(), cfg);
        return exit_pass;
    }

    RunReport rep;
    try {
        rep = experiments::run(*exp, cfg, threads);
        write_report(rep, cfg.text("run.out"));
    } catch (const std::exception& e) {
        err << "error: " << exp->id << ": " << e.what() << "\n";
        return exit_check_failure;
    }
    for (const auto& c : rep.checks)
        out << (c.pass ? "pass  " : "FAIL  ") << c.id << "  target=" << fmt(c.target) << " estimate=" << fmt(c.estimate)
            << " stderr=" << fmt(c.stderr_) << "\n";
    out << exp->id << ": " << (rep.passed() ? "pass" : "fail") << " (artifacts in " << cfg.text("run.out") << ")\n";
    return rep.passed() ? exit_pass : exit_check_failure;
}

}  // namespace popdyn::cli
