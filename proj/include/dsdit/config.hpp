// Flat key=value config text: one pair per line, '#' starts a comment.
#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "dsdit/tensor.hpp"

namespace dsdit {

class KvMap {
public:
    KvMap() = default;

    void set(const std::string& key, const std::string& value) { items_[key] = value; }
    void set_u64(const std::string& key, std::uint64_t v) { items_[key] = std::to_string(v); }
    void set_double(const std::string& key, double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        items_[key] = os.str();
    }
    void set_bool(const std::string& key, bool v) { items_[key] = v ? "true" : "false"; }

    bool has(const std::string& key) const { return items_.count(key) != 0; }

    const std::string& get(const std::string& key) const {
        auto it = items_.find(key);
        if (it == items_.end()) throw ContractError("config: missing key '" + key + "'");
        return it->second;
    }
    std::string get_or(const std::string& key, const std::string& fallback) const {
        auto it = items_.find(key);
        return it == items_.end() ? fallback : it->second;
    }

    std::uint64_t get_u64(const std::string& key) const {
        const std::string& s = get(key);
        try {
            return std::stoull(s);
        } catch (...) {
            throw ContractError("config: key '" + key + "' is not an integer: " + s);
        }
    }
    double get_double(const std::string& key) const {
        const std::string& s = get(key);
        try {
            return std::stod(s);
        } catch (...) {
            throw ContractError("config: key '" + key + "' is not a number: " + s);
        }
    }
    bool get_bool(const std::string& key) const {
        const std::string& s = get(key);
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw ContractError("config: key '" + key + "' is not a boolean: " + s);
    }

    std::string to_text() const {
        std::string out;
        for (const auto& [k, v] : items_) out += k + " = " + v + "\n";
        return out;
    }

    static KvMap from_text(const std::string& text) {
        KvMap kv;
        std::istringstream is(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            const std::string stripped = trim(line);
            if (stripped.empty()) continue;
            const auto eq = stripped.find('=');
            if (eq == std::string::npos)
                throw ContractError("config: line " + std::to_string(lineno) + " has no '='");
            kv.set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
        }
        return kv;
    }

    static KvMap from_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw IoError("config: cannot open " + path);
        std::stringstream ss;
        ss << is.rdbuf();
        return from_text(ss.str());
    }

    void write_file(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw IoError("config: cannot write " + path);
        os << to_text();
    }

    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

private:
    std::map<std::string, std::string> items_;
};

} // namespace dsdit
