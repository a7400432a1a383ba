#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "../kernel/rng.hpp"

namespace popdyn::cli {

/// Raised for malformed, unknown or out-of-range configuration entries.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ParamType { real, count, text };

inline const char* to_string(ParamType t) {
    switch (t) {
        case ParamType::real: return "real";
        case ParamType::count: return "count";
        case ParamType::text: return "text";
    }
    return "?";
}

/// One typed key. `key` is "section.name"; bounds are inclusive.
struct ParamSpec {
    std::string key;
    ParamType type = ParamType::real;
    std::string default_value;
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    std::string help;
};

using Schema = std::vector<ParamSpec>;

inline ParamSpec real_param(std::string key, double def, double lo, double hi, std::string help) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", def);
    return {std::move(key), ParamType::real, buf, lo, hi, std::move(help)};
}

inline ParamSpec count_param(std::string key, std::uint64_t def, double lo, double hi, std::string help) {
    return {std::move(key), ParamType::count, std::to_string(def), lo, hi, std::move(help)};
}

inline ParamSpec text_param(std::string key, std::string def, std::string help) {
    return {std::move(key), ParamType::text, std::move(def), 0.0, 0.0, std::move(help)};
}

/// A key/value assignment and where it came from, for error messages.
struct Entry {
    std::string key;
    std::string value;
    std::string origin;
};

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

inline bool valid_name(std::string_view s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
    });
}

}  // namespace detail

/**
 * Parses the flat sectioned format:
 *
 *     # comment
 *     [section]
 *     key = value
 *
 * Every key must sit inside a section and appear at most once.
 */
inline std::vector<Entry> parse_config_text(std::string_view text, const std::string& origin = "<text>") {
    std::vector<Entry> out;
    std::string section;
    std::size_t line_no = 0, pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        const std::string where = origin + ":" + std::to_string(line_no);
        std::string line = detail::trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
            section = detail::trim(std::string_view(line).substr(1, line.size() - 2));
            if (!detail::valid_name(section)) throw ConfigError(where + ": invalid section name '" + section + "'");
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        const std::string name = detail::trim(std::string_view(line).substr(0, eq));
        std::string value = detail::trim(std::string_view(line).substr(eq + 1));
        if (!detail::valid_name(name)) throw ConfigError(where + ": invalid key '" + name + "'");
        if (section.empty()) throw ConfigError(where + ": key '" + name + "' appears before any [section]");
        const std::string key = section + "." + name;
        for (const auto& e : out)
            if (e.key == key) throw ConfigError(where + ": duplicate key '" + key + "' (first at " + e.origin + ")");
        out.push_back({key, std::move(value), where});
    }
    return out;
}

inline std::vector<Entry> load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

/// Name of the environment variable overriding `key`: POPDYN_<SECTION>_<NAME>, upper case, '-' as '_'.
inline std::string env_name(const std::string& key) {
    std::string s = "POPDYN_";
    for (char c : key) s += (c == '.' || c == '-') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

/// Overrides read from the process environment for every key of the schema.
inline std::vector<Entry> env_overrides(const Schema& schema) {
    std::vector<Entry> out;
    for (const auto& p : schema) {
        const std::string name = env_name(p.key);
        if (const char* v = std::getenv(name.c_str())) out.push_back({p.key, detail::trim(v), "env " + name});
    }
    return out;
}

inline std::string format_bound(double x) {
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// Fully typed configuration after validation.
class Config {
public:
    struct Value {
        ParamType type = ParamType::real;
        double real = 0.0;
        std::uint64_t count = 0;
        std::string text;
    };

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    double real(const std::string& key) const {
        const Value& v = at(key);
        return v.type == ParamType::count ? static_cast<double>(v.count) : v.real;
    }
    std::uint64_t count(const std::string& key) const { return expect(key, ParamType::count).count; }
    const std::string& text(const std::string& key) const { return expect(key, ParamType::text).text; }

    const std::map<std::string, Value>& values() const { return values_; }

    /// Canonical rendering of every key except those in `exclude`, sorted by key.
    std::string canonical(const std::vector<std::string>& exclude = {}) const {
        std::string s;
        for (const auto& [k, v] : values_) {
            if (std::find(exclude.begin(), exclude.end(), k) != exclude.end()) continue;
            s += k + "=" + format(v) + "\n";
        }
        return s;
    }

    static std::string format(const Value& v) {
        switch (v.type) {
            case ParamType::real: {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%.17g", v.real);
                return buf;
            }
            case ParamType::count: return std::to_string(v.count);
            case ParamType::text: return v.text;
        }
        return {};
    }

    void set(const std::string& key, Value v) { values_[key] = std::move(v); }

private:
    const Value& at(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("configuration has no key '" + key + "'");
        return it->second;
    }
    const Value& expect(const std::string& key, ParamType t) const {
        const Value& v = at(key);
        if (v.type != t) throw ConfigError("key '" + key + "' is not of type " + to_string(t));
        return v;
    }

    std::map<std::string, Value> values_;
};

namespace detail {

inline Config::Value parse_value(const ParamSpec& p, const std::string& raw, const std::string& origin) {
    Config::Value v;
    v.type = p.type;
    const auto bad = [&](const std::string& why) {
        return ConfigError(origin + ": key '" + p.key + "' " + why + " (got '" + raw + "')");
    };
    switch (p.type) {
        case ParamType::text:
            if (raw.empty()) throw bad("must not be empty");
            v.text = raw;
            return v;
        case ParamType::count: {
            const char* b = raw.data();
            const char* e = b + raw.size();
            auto [ptr, ec] = std::from_chars(b, e, v.count);
            if (raw.empty() || ec != std::errc() || ptr != e) throw bad("expects a nonnegative integer");
            const double d = static_cast<double>(v.count);
            if (d < p.lo || d > p.hi) throw bad("must lie in [" + format_bound(p.lo) + ", " + format_bound(p.hi) + "]");
            return v;
        }
        case ParamType::real: {
            const char* b = raw.data();
            const char* e = b + raw.size();
            auto [ptr, ec] = std::from_chars(b, e, v.real);
            if (raw.empty() || ec != std::errc() || ptr != e || !std::isfinite(v.real))
                throw bad("expects a finite real number");
            if (v.real < p.lo || v.real > p.hi)
                throw bad("must lie in [" + format_bound(p.lo) + ", " + format_bound(p.hi) + "]");
            return v;
        }
    }
    return v;
}

}  // namespace detail

/**
 * Applies the layers in order (later wins) on top of the schema defaults.
 * Keys outside the schema are rejected.
 */
inline Config resolve(const Schema& schema, const std::vector<std::vector<Entry>>& layers) {
    std::map<std::string, const ParamSpec*> by_key;
    for (const auto& p : schema) by_key[p.key] = &p;
    Config cfg;
    for (const auto& p : schema) cfg.set(p.key, detail::parse_value(p, p.default_value, "default"));
    for (const auto& layer : layers) {
        for (const auto& e : layer) {
            auto it = by_key.find(e.key);
            if (it == by_key.end()) throw ConfigError(e.origin + ": unknown key '" + e.key + "'");
            cfg.set(e.key, detail::parse_value(*it->second, e.value, e.origin));
        }
    }
    return cfg;
}

/// Renders values in the file format, one section per key prefix, with help as comments.
inline std::string render_config(const Schema& schema, const Config& cfg) {
    std::map<std::string, std::vector<const ParamSpec*>> sections;
    std::vector<std::string> order;
    for (const auto& p : schema) {
        const std::string sec = p.key.substr(0, p.key.find('.'));
        if (!sections.count(sec)) order.push_back(sec);
        sections[sec].push_back(&p);
    }
    std::string s;
    for (const auto& sec : order) {
        if (!s.empty()) s += "\n";
        s += "[" + sec + "]\n";
        for (const auto* p : sections[sec]) {
            s += "# " + p->help + " (" + to_string(p->type);
            if (p->type != ParamType::text) s += ", range [" + format_bound(p->lo) + ", " + format_bound(p->hi) + "]";
            s += ")\n";
            s += p->key.substr(sec.size() + 1) + " = " + Config::format(cfg.values().at(p->key)) + "\n";
        }
    }
    return s;
}

inline std::uint64_t config_hash(const std::string& canonical) { return kernel::hash_tag(canonical); }

}  // namespace popdyn::cli
