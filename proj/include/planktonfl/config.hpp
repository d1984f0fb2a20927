#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "planktonfl/error.hpp"
#include "planktonfl/experiments.hpp"

// Experiment config files: one `key = value` per line, `#` starts a comment.
// Absent keys keep their defaults (batch 8, 75 rounds, 1 local epoch, ...).
namespace planktonfl {

namespace config_detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] inline void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError(key + ": expected " + expected + ", got '" + value + "'");
}

template <typename U>
U parse_unsigned(const std::string& key, const std::string& value) {
    U out{};
    const auto* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end) bad_value(key, value, "a non-negative integer");
    return out;
}

inline double parse_real(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) bad_value(key, value, "a number");
        return v;
    } catch (const std::logic_error&) {
        bad_value(key, value, "a number");
    }
}

inline bool parse_switch(const std::string& key, const std::string& value) {
    if (value == "on" || value == "true" || value == "1") return true;
    if (value == "off" || value == "false" || value == "0") return false;
    bad_value(key, value, "on or off");
}

inline std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(trim(item));
    return out;
}

} // namespace config_detail

inline Topology parse_topology(const std::string& value) {
    if (value == "cl") return Topology::cl;
    if (value == "fl") return Topology::fl;
    if (value == "mefl" || value == "me-fl") return Topology::mefl;
    config_detail::bad_value("topology", value, "cl, fl or mefl");
}

/// Applies one key. Unknown keys and malformed values throw ConfigError
/// naming the key.
inline void apply_config_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    using namespace config_detail;
    if (key == "topology") cfg.topology = parse_topology(value);
    else if (key == "clients") cfg.clients = parse_unsigned<std::size_t>(key, value);
    else if (key == "lr") cfg.lr = parse_real(key, value);
    else if (key == "rounds") cfg.rounds = parse_unsigned<std::size_t>(key, value);
    else if (key == "batch_size") cfg.batch_size = parse_unsigned<std::size_t>(key, value);
    else if (key == "local_epochs") cfg.local_epochs = parse_unsigned<std::size_t>(key, value);
    else if (key == "seed") cfg.seed = parse_unsigned<std::uint64_t>(key, value);
    else if (key == "min_epochs") cfg.min_epochs = parse_unsigned<std::size_t>(key, value);
    else if (key == "early_stop_delta") cfg.early_stop_delta = parse_real(key, value);
    else if (key == "data.kind") {
        if (value == "synthetic") cfg.data.kind = DataDescriptor::Kind::synthetic;
        else if (value == "folder") cfg.data.kind = DataDescriptor::Kind::folder;
        else bad_value(key, value, "synthetic or folder");
    } else if (key == "data.path") cfg.data.path = value;
    else if (key == "data.classes") cfg.data.classes = parse_unsigned<std::size_t>(key, value);
    else if (key == "data.per_class") cfg.data.per_class = parse_unsigned<std::size_t>(key, value);
    else if (key == "data.skew") cfg.data.skew = parse_real(key, value);
    else if (key == "data.sources") {
        cfg.data.sources = split_list(value);
        for (const auto& s : cfg.data.sources)
            if (s.empty()) bad_value(key, value, "a comma-separated list of source tags");
    } else if (key == "augment") cfg.augment = parse_switch(key, value);
    else if (key == "split_before_augment") cfg.split_before_augment = parse_switch(key, value);
    else if (key == "split_fraction") cfg.split_fraction = parse_real(key, value);
    else if (key == "image_size") cfg.image_size = parse_unsigned<std::size_t>(key, value);
    else if (key == "model.filters") {
        cfg.conv_filters.clear();
        for (const auto& item : split_list(value)) cfg.conv_filters.push_back(parse_unsigned<std::size_t>(key, item));
    } else if (key == "model.dense_units") cfg.dense_units = parse_unsigned<std::size_t>(key, value);
    else throw ConfigError(key + ": unknown key");
}

inline ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string body = config_detail::trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected `key = value`");
        const std::string key = config_detail::trim(std::string_view(body).substr(0, eq));
        const std::string value = config_detail::trim(std::string_view(body).substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": missing key");
        if (!seen.insert(key).second) throw ConfigError(key + ": duplicate key (line " + std::to_string(line_no) + ")");
        apply_config_key(cfg, key, value);
    }
    if (cfg.topology == Topology::mefl && !seen.contains("clients")) cfg.clients = 2;
    cfg.validate();
    return cfg;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file " + path.string() + " cannot be opened");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

/// Every key, in a form parse_config_text reads back to the same config.
inline std::string to_config_text(const ExperimentConfig& cfg) {
    std::ostringstream out;
    auto join = [](const auto& items) {
        std::ostringstream s;
        for (std::size_t i = 0; i < items.size(); ++i) s << (i ? "," : "") << items[i];
        return s.str();
    };
    out << "topology = " << to_string(cfg.topology) << '\n'
        << "clients = " << cfg.clients << '\n'
        << "lr = " << format_number("%.17g", cfg.lr) << '\n'
        << "rounds = " << cfg.rounds << '\n'
        << "batch_size = " << cfg.batch_size << '\n'
        << "local_epochs = " << cfg.local_epochs << '\n'
        << "seed = " << cfg.seed << '\n'
        << "min_epochs = " << cfg.min_epochs << '\n'
        << "early_stop_delta = " << format_number("%.17g", cfg.early_stop_delta) << '\n'
        << "data.kind = " << (cfg.data.kind == DataDescriptor::Kind::folder ? "folder" : "synthetic") << '\n';
    if (!cfg.data.path.empty()) out << "data.path = " << cfg.data.path << '\n';
    out << "data.classes = " << cfg.data.classes << '\n'
        << "data.per_class = " << cfg.data.per_class << '\n'
        << "data.skew = " << format_number("%.17g", cfg.data.skew) << '\n'
        << "data.sources = " << join(cfg.data.sources) << '\n'
        << "augment = " << (cfg.augment ? "on" : "off") << '\n'
        << "split_before_augment = " << (cfg.split_before_augment ? "on" : "off") << '\n'
        << "split_fraction = " << format_number("%.17g", cfg.split_fraction) << '\n'
        << "image_size = " << cfg.image_size << '\n'
        << "model.filters = " << join(cfg.conv_filters) << '\n'
        << "model.dense_units = " << cfg.dense_units << '\n';
    return out.str();
}

} // namespace planktonfl
