#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fedsieve/common.hpp"

namespace fedsieve {

// Flat key/value file with [section] headers, '#' or ';' comments, and
// comma-separated lists. Keys are addressed as "section.key".
class ConfigFile {
public:
    static ConfigFile parse_string(const std::string& text) {
        ConfigFile cfg;
        std::istringstream in(text);
        std::string line, section;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::size_t comment = line.find_first_of("#;");
            if (comment != std::string::npos) line.erase(comment);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError("config line " + std::to_string(lineno) + ": bad section");
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            std::size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            if (key.empty())
                throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
            cfg.entries_[section.empty() ? key : section + "." + key] = value;
        }
        return cfg;
    }

    static ConfigFile parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("config: cannot open " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_string(buf.str());
    }

    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& fallback) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? fallback : it->second;
    }

    std::string require_str(const std::string& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) throw ConfigError("config: missing required key " + key);
        return it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        return to_double(key, it->second);
    }

    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        return to_int(key, it->second);
    }

    std::vector<std::size_t> get_index_list(const std::string& key,
                                            std::vector<std::size_t> fallback) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        std::vector<std::size_t> out;
        std::istringstream ss(it->second);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            std::int64_t v = to_int(key, item);
            if (v < 0) throw ConfigError("config: negative index in " + key);
            out.push_back(static_cast<std::size_t>(v));
        }
        return out;
    }

private:
    static std::string trim(const std::string& s) {
        std::size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        std::size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    static double to_double(const std::string& key, const std::string& value) {
        try {
            std::size_t used = 0;
            double v = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: " + key + " is not a number: " + value);
        }
    }

    static std::int64_t to_int(const std::string& key, const std::string& value) {
        try {
            std::size_t used = 0;
            std::int64_t v = std::stoll(value, &used);
            if (used != value.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: " + key + " is not an integer: " + value);
        }
    }

    std::map<std::string, std::string> entries_;
};

}  // namespace fedsieve
