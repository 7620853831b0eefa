#pragma once

// Flat experiment configuration:
//
//   # comment
//   [scenario]
//   name = case1
//   epsilon = 0.4
//   [pipeline]
//   name = refute
//   delta = 0.05
//
// Values are numbers, integers, comma-separated vectors (optionally in
// brackets) or bare text. Keys are validated against per-pipeline schemas.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "shadowlab/errors.hpp"
#include "shadowlab/flow.hpp"

namespace shadowlab {

struct ConfigEntry {
    std::string value;
    int line = 0;
};

struct ConfigSection {
    bool present = false;
    int line = 0;
    std::map<std::string, ConfigEntry> entries;

    const ConfigEntry* find(const std::string& key) const {
        const auto it = entries.find(key);
        return it == entries.end() ? nullptr : &it->second;
    }
};

struct ExperimentConfig {
    std::string source = "<config>";
    ConfigSection scenario;
    ConfigSection pipeline;

    std::string scenario_name() const { return required_name(scenario, "scenario"); }
    std::string pipeline_name() const { return required_name(pipeline, "pipeline"); }

private:
    static std::string required_name(const ConfigSection& s, const std::string& section) {
        const ConfigEntry* e = s.find("name");
        if (!e) {
            throw ConfigError("missing required key 'name' in [" + section + "]" +
                                  (s.present ? "" : " (section absent)"),
                              s.line);
        }
        return e->value;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace detail

inline ExperimentConfig parse_config(std::istream& is, const std::string& source = "<config>") {
    ExperimentConfig cfg;
    cfg.source = source;
    ConfigSection* current = nullptr;
    std::string raw;
    int lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        std::string line = raw;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("unterminated section header", lineno);
            const std::string name = detail::trim(line.substr(1, line.size() - 2));
            if (name == "scenario") current = &cfg.scenario;
            else if (name == "pipeline") current = &cfg.pipeline;
            else throw ConfigError("unknown section [" + name + "]; expected [scenario] or [pipeline]", lineno);
            if (current->present) throw ConfigError("duplicate section [" + name + "]", lineno);
            current->present = true;
            current->line = lineno;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected 'key = value'", lineno);
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("empty key", lineno);
        if (value.empty()) throw ConfigError("empty value for key '" + key + "'", lineno);
        if (!current) throw ConfigError("key '" + key + "' outside a section", lineno);
        if (current->entries.count(key)) throw ConfigError("duplicate key '" + key + "'", lineno);
        current->entries[key] = {value, lineno};
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'", 0);
    return parse_config(in, path);
}

enum class ParamKind { number, integer, vector, text };

struct ParamSpec {
    std::string key;
    ParamKind kind = ParamKind::number;
    std::string fallback;  // empty: no default
    double min = -std::numeric_limits<double>::infinity();
    double max = std::numeric_limits<double>::infinity();
    std::string help;
};

/// Validated pipeline parameters.
class Params {
public:
    Params() = default;

    Params(const ConfigSection& section, const std::vector<ParamSpec>& schema, const std::string& owner) {
        for (const auto& [key, entry] : section.entries) {
            if (key == "name") continue;
            bool known = false;
            for (const auto& s : schema) known = known || s.key == key;
            if (!known) {
                std::string list;
                for (const auto& s : schema) list += (list.empty() ? "" : ", ") + s.key;
                throw ConfigError("unknown key '" + key + "' for " + owner + " (known: " + list + ")", entry.line);
            }
        }
        for (const auto& s : schema) {
            const ConfigEntry* e = section.find(s.key);
            if (e) store(s, e->value, e->line);
            else if (!s.fallback.empty()) store(s, s.fallback, 0);
        }
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    int line(const std::string& key) const {
        const auto it = values_.find(key);
        return it == values_.end() ? 0 : it->second.line;
    }

    double number(const std::string& key) const { return get(key).vec.at(0); }
    long integer(const std::string& key) const { return static_cast<long>(get(key).vec.at(0)); }
    std::uint64_t u64(const std::string& key) const { return get(key).u64; }
    const std::string& text(const std::string& key) const { return get(key).text; }
    Vec vector(const std::string& key, Eigen::Index dim = -1) const {
        const Value& v = get(key);
        Vec out(static_cast<Eigen::Index>(v.vec.size()));
        for (std::size_t i = 0; i < v.vec.size(); ++i) out[static_cast<Eigen::Index>(i)] = v.vec[i];
        if (dim >= 0 && out.size() != dim) {
            throw ConfigError("key '" + key + "' needs " + std::to_string(dim) + " components, got " +
                                  std::to_string(out.size()),
                              v.line);
        }
        return out;
    }

    /// Override (CLI flags); value is checked against the same schema.
    void set(const ParamSpec& s, const std::string& value) { store(s, value, 0); }

private:
    struct Value {
        std::vector<double> vec;
        std::uint64_t u64 = 0;
        std::string text;
        int line = 0;
    };

    const Value& get(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing required key '" + key + "' in [pipeline]", 0);
        return it->second;
    }

    static double parse_number(const std::string& tok, const std::string& key, int line) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size() || !std::isfinite(v)) {
            throw ConfigError("key '" + key + "': '" + tok + "' is not a finite number", line);
        }
        return v;
    }

    void store(const ParamSpec& s, const std::string& raw, int line) {
        Value v;
        v.line = line;
        v.text = raw;
        auto check = [&](double x) {
            if (x < s.min || x > s.max) {
                std::ostringstream os;
                os << "key '" << s.key << "' = " << raw << " outside [" << s.min << ", " << s.max << "]";
                throw ConfigError(os.str(), line);
            }
        };
        switch (s.kind) {
        case ParamKind::text:
            break;
        case ParamKind::number: {
            const double x = parse_number(detail::trim(raw), s.key, line);
            check(x);
            v.vec = {x};
            break;
        }
        case ParamKind::integer: {
            const std::string tok = detail::trim(raw);
            std::size_t used = 0;
            unsigned long long u = 0;
            try {
                if (!tok.empty() && tok.front() != '-') u = std::stoull(tok, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != tok.size()) {
                throw ConfigError("key '" + s.key + "': '" + tok + "' is not a non-negative integer", line);
            }
            check(static_cast<double>(u));
            v.u64 = u;
            v.vec = {static_cast<double>(u)};
            break;
        }
        case ParamKind::vector: {
            std::string body = detail::trim(raw);
            if (!body.empty() && (body.front() == '[' || body.front() == '(')) body = body.substr(1);
            if (!body.empty() && (body.back() == ']' || body.back() == ')')) body.pop_back();
            std::stringstream ss(body);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                const double x = parse_number(detail::trim(tok), s.key, line);
                check(x);
                v.vec.push_back(x);
            }
            if (v.vec.empty()) throw ConfigError("key '" + s.key + "' needs at least one component", line);
            break;
        }
        }
        values_[s.key] = std::move(v);
    }

    std::map<std::string, Value> values_;
};

} // namespace shadowlab
