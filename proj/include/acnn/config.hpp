#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "acnn/core.hpp"

namespace acnn {

/// Flat "key = value" configuration with [section] headers. Entries keep
/// their order and raw value text so a parsed file re-emits losslessly.
class Config {
public:
    struct Entry {
        std::string section;
        std::string key;
        std::string value;
    };

    static Config parse_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw IOError("cannot open config file: " + path);
        return parse_stream(is, path);
    }

    static Config parse_string(const std::string& text) {
        std::istringstream is(text);
        return parse_stream(is, "<string>");
    }

    static Config parse_stream(std::istream& is, const std::string& origin) {
        Config cfg;
        std::string line, section;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            std::string t = trim(line);
            if (t.empty() || t[0] == '#' || t[0] == ';') continue;
            if (t.front() == '[' && t.back() == ']') {
                section = trim(t.substr(1, t.size() - 2));
                continue;
            }
            auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ParseError(origin + " line " + std::to_string(lineno) +
                                 ": expected 'key = value'");
            cfg.set(section, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
        }
        return cfg;
    }

    void set(const std::string& section, const std::string& key, const std::string& value) {
        for (auto& e : entries_) {
            if (e.section == section && e.key == key) {
                e.value = value;
                return;
            }
        }
        entries_.push_back({section, key, value});
    }

    [[nodiscard]] bool has(const std::string& section, const std::string& key) const {
        return find(section, key) != nullptr;
    }

    [[nodiscard]] std::string get(const std::string& section, const std::string& key) const {
        const Entry* e = find(section, key);
        if (!e) throw ParseError("config: missing key [" + section + "] " + key);
        return e->value;
    }
    [[nodiscard]] std::string get_or(const std::string& section, const std::string& key,
                                     const std::string& fallback) const {
        const Entry* e = find(section, key);
        return e ? e->value : fallback;
    }
    [[nodiscard]] double get_double(const std::string& section, const std::string& key) const {
        return std::stod(get(section, key));
    }
    [[nodiscard]] double get_double_or(const std::string& section, const std::string& key,
                                       double fallback) const {
        const Entry* e = find(section, key);
        return e ? std::stod(e->value) : fallback;
    }
    [[nodiscard]] long get_int(const std::string& section, const std::string& key) const {
        return std::stol(get(section, key));
    }
    [[nodiscard]] long get_int_or(const std::string& section, const std::string& key,
                                  long fallback) const {
        const Entry* e = find(section, key);
        return e ? std::stol(e->value) : fallback;
    }
    [[nodiscard]] std::vector<double> get_doubles_or(const std::string& section,
                                                     const std::string& key,
                                                     std::vector<double> fallback) const {
        const Entry* e = find(section, key);
        if (!e) return fallback;
        std::vector<double> out;
        std::istringstream is(e->value);
        std::string tok;
        while (std::getline(is, tok, ',')) out.push_back(std::stod(trim(tok)));
        return out;
    }
    [[nodiscard]] std::vector<std::string> get_strings_or(const std::string& section,
                                                          const std::string& key) const {
        const Entry* e = find(section, key);
        std::vector<std::string> out;
        if (!e) return out;
        std::istringstream is(e->value);
        std::string tok;
        while (std::getline(is, tok, ',')) {
            tok = trim(tok);
            if (!tok.empty()) out.push_back(tok);
        }
        return out;
    }

    [[nodiscard]] std::string emit() const {
        std::string out;
        std::string section = "\x01";  // sentinel: differs from any real name
        for (const auto& e : entries_) {
            if (e.section != section) {
                if (!out.empty()) out += "\n";
                if (!e.section.empty()) out += "[" + e.section + "]\n";
                section = e.section;
            }
            out += e.key + " = " + e.value + "\n";
        }
        return out;
    }

    [[nodiscard]] std::uint64_t content_hash() const {
        Hasher h;
        std::string text = emit();
        h.update(text.data(), text.size());
        return h.digest();
    }

    [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }

    /// Applies "section.key=value" overrides, as mirrored by the CLI.
    void apply_override(const std::string& spec) {
        auto eq = spec.find('=');
        if (eq == std::string::npos)
            throw ParseError("override '" + spec + "': expected section.key=value");
        std::string path = trim(spec.substr(0, eq));
        std::string value = trim(spec.substr(eq + 1));
        auto dot = path.find('.');
        std::string section = dot == std::string::npos ? "" : path.substr(0, dot);
        std::string key = dot == std::string::npos ? path : path.substr(dot + 1);
        set(section, key, value);
    }

private:
    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }
    [[nodiscard]] const Entry* find(const std::string& section, const std::string& key) const {
        for (const auto& e : entries_)
            if (e.section == section && e.key == key) return &e;
        return nullptr;
    }
    std::vector<Entry> entries_;
};

}  // namespace acnn
