#pragma once

// Flat "key = value" configuration text with '#' comments and dotted keys
// (model.*, train.*, rain.*). Shared by config files and the checkpoint
// header.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"

namespace rsen {

/// Ordered key/value entries as they appeared in the text.
class ConfigText {
public:
    static ConfigText parse(const std::string& text) {
        ConfigText cfg;
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            const std::string stripped = trim(line);
            if (stripped.empty()) continue;
            const auto eq = stripped.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
            }
            const std::string key = trim(stripped.substr(0, eq));
            const std::string value = trim(stripped.substr(eq + 1));
            if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
            if (cfg.values_.contains(key)) throw ConfigError("duplicate config key '" + key + "'");
            cfg.set(key, value);
        }
        return cfg;
    }

    static ConfigText load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot read config file '" + path + "'");
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    void set(const std::string& key, const std::string& value) {
        if (!values_.contains(key)) order_.push_back(key);
        values_[key] = value;
    }

    [[nodiscard]] bool has(const std::string& key) const { return values_.contains(key); }
    [[nodiscard]] const std::string& get(const std::string& key) const { return values_.at(key); }
    [[nodiscard]] const std::vector<std::string>& keys() const { return order_; }

    /// Throws on the first key that is neither in `known` nor under a
    /// prefix listed in `ignored_prefixes`.
    void reject_unknown(const std::vector<std::string>& known,
                        const std::vector<std::string>& ignored_prefixes = {}) const {
        for (const auto& key : order_) {
            if (std::find(known.begin(), known.end(), key) != known.end()) continue;
            const bool ignored = std::any_of(ignored_prefixes.begin(), ignored_prefixes.end(),
                                             [&](const std::string& p) { return key.starts_with(p); });
            if (!ignored) throw ConfigError("unknown config key '" + key + "'");
        }
    }

    [[nodiscard]] std::string str() const {
        std::string out;
        for (const auto& key : order_) out += key + " = " + values_.at(key) + "\n";
        return out;
    }

    template <typename Fn>
    void read(const std::string& key, Fn&& assign) const {
        if (!has(key)) return;
        try {
            assign(get(key));
        } catch (const ConfigError& e) {
            throw ConfigError("config key '" + key + "': " + e.what());
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': invalid value '" + get(key) + "'");
        }
    }

private:
    static std::string trim(const std::string& s) {
        auto b = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
        auto e = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); }).base();
        return b < e ? std::string(b, e) : std::string{};
    }

    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
};

inline long parse_int(const std::string& v) {
    std::size_t used = 0;
    const long out = std::stol(v, &used);
    if (used != v.size()) throw ConfigError("not an integer: '" + v + "'");
    return out;
}

inline double parse_double(const std::string& v) {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw ConfigError("not a number: '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError("not a boolean: '" + v + "'");
}

inline std::string bool_str(bool b) { return b ? "true" : "false"; }

inline const std::vector<std::string>& model_keys() {
    static const std::vector<std::string> keys{"model.base_channels", "model.bottleneck_blocks", "model.se_squeeze",
                                               "model.use_skip",      "model.use_res",           "model.use_se",
                                               "model.channel_scale"};
    return keys;
}

inline ModelConfig model_config_from(const ConfigText& text, ModelConfig cfg = {}) {
    text.read("model.base_channels", [&](const std::string& v) { cfg.base_channels = static_cast<int>(parse_int(v)); });
    text.read("model.bottleneck_blocks",
              [&](const std::string& v) { cfg.bottleneck_blocks = static_cast<int>(parse_int(v)); });
    text.read("model.se_squeeze", [&](const std::string& v) { cfg.se_squeeze = static_cast<int>(parse_int(v)); });
    text.read("model.use_skip", [&](const std::string& v) { cfg.use_skip = parse_bool(v); });
    text.read("model.use_res", [&](const std::string& v) { cfg.use_res = parse_bool(v); });
    text.read("model.use_se", [&](const std::string& v) { cfg.use_se = parse_bool(v); });
    text.read("model.channel_scale", [&](const std::string& v) { cfg.channel_scale = Ratio::parse(v); });
    cfg.validate();
    return cfg;
}

inline void write_model_config(ConfigText& text, const ModelConfig& cfg) {
    text.set("model.base_channels", std::to_string(cfg.base_channels));
    text.set("model.bottleneck_blocks", std::to_string(cfg.bottleneck_blocks));
    text.set("model.se_squeeze", std::to_string(cfg.se_squeeze));
    text.set("model.use_skip", bool_str(cfg.use_skip));
    text.set("model.use_res", bool_str(cfg.use_res));
    text.set("model.use_se", bool_str(cfg.use_se));
    text.set("model.channel_scale", cfg.channel_scale.str());
}

} // namespace rsen
