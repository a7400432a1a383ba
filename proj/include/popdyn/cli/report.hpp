#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace popdyn::cli {

/// Shortest round-trip decimal form; NaN becomes an empty field.
inline std::string fmt(double x) {
    if (std::isnan(x)) return "";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string fmt(std::uint64_t x) { return std::to_string(x); }

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

/// A named CSV artifact.
struct Table {
    std::string name;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add(std::vector<std::string> row) {
        if (row.size() != header.size()) throw std::logic_error("Table " + name + ": row width mismatch");
        rows.push_back(std::move(row));
    }

    std::string to_csv() const {
        std::string s;
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (i) s += ',';
                s += csv_escape(cells[i]);
            }
            s += '\n';
        };
        line(header);
        for (const auto& r : rows) line(r);
        return s;
    }
};

struct CheckRow {
    std::string id;
    double target;
    double estimate;
    double stderr_;
    bool pass;
};

struct RunReport {
    std::string experiment;
    std::vector<CheckRow> checks;
    std::vector<Table> tables;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::string code_version;

    bool passed() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return !checks.empty();
    }

    void check(std::string id, double target, double estimate, double se, bool pass) {
        checks.push_back({std::move(id), target, estimate, se, pass});
    }

    Table checks_table() const {
        Table t{"report", {"check_id", "target", "estimate", "stderr", "verdict"}, {}};
        for (const auto& c : checks) t.add({c.id, fmt(c.target), fmt(c.estimate), fmt(c.stderr_), c.pass ? "pass" : "fail"});
        return t;
    }

    Table provenance_table() const {
        char hash[32];
        std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash));
        Table t{"provenance", {"key", "value"}, {}};
        t.add({"experiment", experiment});
        t.add({"config_hash", hash});
        t.add({"seed", fmt(seed)});
        t.add({"code_version", code_version});
        t.add({"verdict", passed() ? "pass" : "fail"});
        return t;
    }
};

/// Writes report.csv, provenance.csv and one file per table into `dir`.
inline void write_report(const RunReport& rep, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto write = [&](const Table& t) {
        std::ofstream out(dir / (t.name + ".csv"), std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + (dir / (t.name + ".csv")).string());
        out << t.to_csv();
    };
    write(rep.checks_table());
    write(rep.provenance_table());
    for (const auto& t : rep.tables) write(t);
}

}  // namespace popdyn::cli
