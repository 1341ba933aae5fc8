#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "less/errors.hpp"

namespace less {

// Flat key = value text. Blank lines and lines starting with '#' are
// ignored; whitespace around keys and values is trimmed.
class KeyValues {
public:
    KeyValues() = default;

    static KeyValues parse(std::istream& is, const std::string& origin = "<config>") {
        KeyValues kv;
        kv.origin_ = origin;
        std::size_t line_no = 0;
        for (std::string line; std::getline(is, line);) {
            ++line_no;
            auto text = trim(line);
            if (text.empty() || text[0] == '#') continue;
            auto eq = text.find('=');
            if (eq == std::string::npos)
                throw FormatError(origin + ":" + std::to_string(line_no) + ": expected key = value");
            auto key = trim(text.substr(0, eq));
            if (key.empty()) throw FormatError(origin + ":" + std::to_string(line_no) + ": empty key");
            if (kv.values_.count(key)) throw FormatError(origin + ":" + std::to_string(line_no) + ": duplicate key " + key);
            kv.values_[key] = trim(text.substr(eq + 1));
        }
        return kv;
    }

    static KeyValues load(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw FormatError("cannot read " + path.string());
        return parse(is, path.string());
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
    const std::map<std::string, std::string>& values() const { return values_; }

    template <class T>
    void read(const std::string& key, T& out) const {
        auto it = values_.find(key);
        if (it == values_.end()) return;
        used_.insert(key);
        out = convert<T>(key, it->second);
    }

    // Keys never passed to read(); a typo in a config file shows up here.
    std::vector<std::string> unused() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_)
            if (!used_.count(k)) out.push_back(k);
        return out;
    }

    void require_all_used() const {
        auto extra = unused();
        if (extra.empty()) return;
        std::string msg = origin_ + ": unknown key";
        for (const auto& k : extra) msg += " " + k;
        throw FormatError(msg);
    }

    std::string dump() const {
        std::ostringstream os;
        for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
        return os.str();
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    }

    template <class T>
    T convert(const std::string& key, const std::string& text) const {
        if constexpr (std::is_same_v<T, std::string>) {
            return text;
        } else if constexpr (std::is_same_v<T, bool>) {
            if (text == "true" || text == "1") return true;
            if (text == "false" || text == "0") return false;
            throw FormatError(origin_ + ": " + key + " expects true/false, got '" + text + "'");
        } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
            std::vector<std::string> out;
            std::stringstream ss(text);
            for (std::string item; std::getline(ss, item, ',');)
                if (auto t = trim(item); !t.empty()) out.push_back(t);
            return out;
        } else {
            T v{};
            auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc() || p != text.data() + text.size())
                throw FormatError(origin_ + ": " + key + " has bad value '" + text + "'");
            return v;
        }
    }

    std::string origin_;
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

}  // namespace less
