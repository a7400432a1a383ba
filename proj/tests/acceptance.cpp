// Runs the registered experiment of each acceptance criterion with its default
// configuration and prints one PASS/FAIL line per criterion.
//
//   acceptance            all criteria
//   acceptance 3 7        only criteria 3 and 7

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <string>

#include "popdyn/experiments.hpp"

int main(int argc, char** argv) {
    using namespace popdyn;
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
    int failures = 0;
    for (const auto& e : experiments::registry()) {
        if (!wanted.empty() && !wanted.count(e.criterion)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = false;
        try {
            const auto cfg = experiments::resolve_config(e, {});
            const auto rep = experiments::run(e, cfg, 1);
            ok = rep.passed();
            std::size_t passed = 0;
            for (const auto& c : rep.checks) {
                if (c.pass) {
                    ++passed;
                } else {
                    detail += " [" + c.id + ": target=" + cli::fmt(c.target) + " estimate=" + cli::fmt(c.estimate) +
                              " stderr=" + cli::fmt(c.stderr_) + "]";
                }
            }
            detail = std::to_string(passed) + "/" + std::to_string(rep.checks.size()) + " checks" + detail;
        } catch (const std::exception& ex) {
            detail = std::string("exception: ") + ex.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s criterion %2d %-30s %s (%.1f s)\n", ok ? "PASS" : "FAIL", e.criterion, e.id.c_str(),
                    detail.c_str(), secs);
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
