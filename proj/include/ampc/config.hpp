#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ampc/errors.hpp"

namespace ampc {

/**
 * Flat key-value configuration with nested sections.
 *
 * File syntax:
 *
 *     # comment
 *     [section]
 *     key = value
 *     [section.subsection]
 *     other = 1.5
 *
 * Keys are stored fully qualified ("section.subsection.other"). Values are
 * strings; typed getters parse on access. Serialization is deterministic
 * (keys sorted), so a serialized config can participate in artifact checksums.
 */
class Config {
public:
    Config() = default;

    static Config parse(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = trim(line);
            if (s.empty() || s[0] == '#' || s[0] == ';') continue;
            if (s.front() == '[') {
                if (s.back() != ']')
                    throw ConfigError("unterminated section header at line " + std::to_string(lineno));
                section = trim(s.substr(1, s.size() - 2));
                continue;
            }
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw ConfigError("expected key=value at line " + std::to_string(lineno));
            std::string key = trim(s.substr(0, eq));
            std::string val = trim(s.substr(eq + 1));
            if (key.empty()) throw ConfigError("empty key at line " + std::to_string(lineno));
            cfg.values_[section.empty() ? key : section + "." + key] = val;
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot open config file " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& def) const {
        auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }

    double get_double(const std::string& key, double def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        char* end = nullptr;
        double v = std::strtod(it->second.c_str(), &end);
        if (end == it->second.c_str() || *end != '\0')
            throw ConfigError("key " + key + " is not a number: '" + it->second + "'");
        return v;
    }

    std::int64_t get_int(const std::string& key, std::int64_t def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        char* end = nullptr;
        long long v = std::strtoll(it->second.c_str(), &end, 10);
        if (end == it->second.c_str() || *end != '\0')
            throw ConfigError("key " + key + " is not an integer: '" + it->second + "'");
        return v;
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        char* end = nullptr;
        unsigned long long v = std::strtoull(it->second.c_str(), &end, 10);
        if (end == it->second.c_str() || *end != '\0')
            throw ConfigError("key " + key + " is not an unsigned integer: '" + it->second + "'");
        return v;
    }

    bool get_bool(const std::string& key, bool def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        const std::string& s = it->second;
        if (s == "true" || s == "1" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "no") return false;
        throw ConfigError("key " + key + " is not a boolean: '" + s + "'");
    }

    void set(const std::string& key, const std::string& val) { values_[key] = val; }
    void set_double(const std::string& key, double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        values_[key] = buf;
    }
    void set_int(const std::string& key, std::int64_t v) { values_[key] = std::to_string(v); }
    void set_u64(const std::string& key, std::uint64_t v) { values_[key] = std::to_string(v); }

    /// Deterministic dump, grouped by section, keys sorted.
    std::string dump() const {
        std::ostringstream out;
        std::string current_section;
        bool first = true;
        for (const auto& [qkey, val] : values_) {
            auto dot = qkey.rfind('.');
            std::string section = dot == std::string::npos ? "" : qkey.substr(0, dot);
            std::string key = dot == std::string::npos ? qkey : qkey.substr(dot + 1);
            if (section != current_section || first) {
                if (!first) out << "\n";
                if (!section.empty()) out << "[" << section << "]\n";
                current_section = section;
            }
            out << key << " = " << val << "\n";
            first = false;
        }
        return out.str();
    }

    void save(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw IoError("cannot write config file " + path);
        f << dump();
    }

    /// All keys that live under a section prefix (e.g. "quadcopter.").
    std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_)
            if (k.rfind(prefix, 0) == 0) out.push_back(k);
        return out;
    }

private:
    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace ampc
