// SPDX-License-Identifier: Apache-2.0
#include "capforge/config.hpp"

#include "capforge/error.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace capforge {

namespace {

std::string trim(std::string s) {
    auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
    return s;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos == v.size() && std::isfinite(d)) return d;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::InvalidArgument, "config '" + key + "': expected a number, got '" + v + "'");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    require(ec == std::errc() && p == v.data() + v.size(), ErrorKind::InvalidArgument,
            "config '" + key + "': expected a non-negative integer, got '" + v + "'");
    return out;
}

// Shortest text that parses back to the same double.
std::string fmt(double d) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, d);
    require(ec == std::errc(), ErrorKind::Runtime, "cannot format real");
    return std::string(buf, end);
}

struct Field {
    std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const PipelineConfig&)> get;
};

#define CAP_FIELD_SIZE(expr)                                                                                               \
    Field {                                                                                                                \
        [](PipelineConfig& c, const std::string& k, const std::string& v) { c.expr = static_cast<decltype(c.expr)>(to_u64(k, v)); }, \
            [](const PipelineConfig& c) { return std::to_string(c.expr); }                                                 \
    }
#define CAP_FIELD_REAL(expr)                                                                                               \
    Field {                                                                                                                \
        [](PipelineConfig& c, const std::string& k, const std::string& v) { c.expr = to_double(k, v); },                   \
            [](const PipelineConfig& c) { return fmt(c.expr); }                                                            \
    }

const std::map<std::string, Field>& registry() {
    static const std::map<std::string, Field> fields = {
        {"seed", {[](PipelineConfig& c, const std::string& k, const std::string& v) {
                      c.train.seed = to_u64(k, v);
                      c.synth.seed = c.train.seed;
                  },
                  [](const PipelineConfig& c) { return std::to_string(c.train.seed); }}},
        {"paradigm", {[](PipelineConfig& c, const std::string&, const std::string& v) { c.train.paradigm = parse_paradigm(v); },
                      [](const PipelineConfig& c) { return to_string(c.train.paradigm); }}},
        {"epochs", {[](PipelineConfig& c, const std::string& k, const std::string& v) {
                        c.train.epochs = static_cast<int>(to_u64(k, v));
                    },
                    [](const PipelineConfig& c) { return std::to_string(c.train.epochs); }}},
        {"batch_size", CAP_FIELD_SIZE(train.batch_size)},
        {"lr", CAP_FIELD_REAL(train.lr)},
        {"momentum", CAP_FIELD_REAL(train.momentum)},
        {"weight_decay", CAP_FIELD_REAL(train.weight_decay)},
        {"tau", CAP_FIELD_REAL(train.tau)},
        {"k", CAP_FIELD_SIZE(train.k)},
        {"margin_scale", CAP_FIELD_REAL(train.margin_scale)},
        {"growth_every", {[](PipelineConfig& c, const std::string& k, const std::string& v) {
                              c.train.growth_every = static_cast<int>(to_u64(k, v));
                          },
                          [](const PipelineConfig& c) { return std::to_string(c.train.growth_every); }}},
        {"gamma", CAP_FIELD_REAL(train.gamma)},
        {"aug_noise", CAP_FIELD_REAL(train.aug_noise)},
        {"t", {[](PipelineConfig& c, const std::string& k, const std::string& v) { c.t = v == "auto" ? 0 : to_u64(k, v); },
               [](const PipelineConfig& c) { return c.t == 0 ? std::string("auto") : std::to_string(c.t); }}},
        {"n_descriptions", CAP_FIELD_SIZE(n_descriptions)},
        {"theta_g", CAP_FIELD_REAL(theta_g)},
        {"ece_bins", CAP_FIELD_SIZE(ece_bins)},
        {"seen_fraction", CAP_FIELD_REAL(seen_fraction)},
        {"ssl_per_class", CAP_FIELD_SIZE(ssl_per_class)},
        {"provider", {[](PipelineConfig& c, const std::string&, const std::string& v) {
                          if (v == "file")
                              c.provider = ProviderKind::File;
                          else if (v == "mock")
                              c.provider = ProviderKind::Mock;
                          else
                              fail(ErrorKind::InvalidArgument, "config 'provider': expected file or mock, got '" + v + "'");
                      },
                      [](const PipelineConfig& c) { return std::string(c.provider == ProviderKind::File ? "file" : "mock"); }}},
        {"descriptions", {[](PipelineConfig& c, const std::string&, const std::string& v) { c.descriptions = v; },
                          [](const PipelineConfig& c) { return c.descriptions; }}},
        {"synth.n_classes", CAP_FIELD_SIZE(synth.n_classes)},
        {"synth.per_class", CAP_FIELD_SIZE(synth.per_class)},
        {"synth.test_per_class", CAP_FIELD_SIZE(synth.test_per_class)},
        {"synth.dim", CAP_FIELD_SIZE(synth.dim)},
        {"synth.intra_class_std", CAP_FIELD_REAL(synth.intra_class_std)},
        {"synth.n_mismatch", CAP_FIELD_SIZE(synth.n_mismatch)},
        {"synth.n_confusion_pairs", CAP_FIELD_SIZE(synth.n_confusion_pairs)},
        {"synth.confusion_bias", CAP_FIELD_REAL(synth.confusion_bias)},
        {"synth.confusion_cos", CAP_FIELD_REAL(synth.confusion_cos)},
        {"synth.min_center_angle_deg", CAP_FIELD_REAL(synth.min_center_angle_deg)},
        {"synth.aug_noise_std", CAP_FIELD_REAL(synth.aug_noise_std)},
        {"synth.description_noise", CAP_FIELD_REAL(synth.description_noise)},
        {"synth.n_descriptions", CAP_FIELD_SIZE(synth.n_descriptions)},
    };
    return fields;
}

#undef CAP_FIELD_SIZE
#undef CAP_FIELD_REAL

}  // namespace

void PipelineConfig::set(const std::string& key, const std::string& value) {
    const auto& reg = registry();
    auto it = reg.find(key);
    require(it != reg.end(), ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
    it->second.set(*this, key, trim(value));
}

std::string PipelineConfig::get(const std::string& key) const {
    const auto& reg = registry();
    auto it = reg.find(key);
    require(it != reg.end(), ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
    return it->second.get(*this);
}

const std::vector<std::string>& PipelineConfig::keys() {
    static const std::vector<std::string> all = [] {
        std::vector<std::string> k;
        for (const auto& [name, _] : registry()) k.push_back(name);
        return k;
    }();
    return all;
}

std::vector<std::pair<std::string, std::string>> parse_kv_text(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // strip comments outside quotes
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line.erase(i);
                break;
            }
        }
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            require(line.back() == ']', ErrorKind::InvalidArgument, "config line " + std::to_string(lineno) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        require(eq != std::string::npos, ErrorKind::InvalidArgument, "config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        if (!section.empty()) key = section + "." + key;
        out.emplace_back(std::move(key), std::move(value));
    }
    return out;
}

void PipelineConfig::load_file(const std::filesystem::path& file) {
    require(std::filesystem::exists(file), ErrorKind::MissingFile, "missing file: " + file.string());
    std::ifstream in(file);
    std::stringstream ss;
    ss << in.rdbuf();
    for (const auto& [k, v] : parse_kv_text(ss.str())) set(k, v);
}

std::string env_name(const std::string& key) {
    std::string out = "CAPFORGE_";
    for (char ch : key) out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return out;
}

void PipelineConfig::apply_env(const char* const* envp) {
    if (!envp) return;
    std::map<std::string, std::string> env;
    for (const char* const* e = envp; *e; ++e) {
        const char* eq = std::strchr(*e, '=');
        if (eq) env.emplace(std::string(*e, eq), std::string(eq + 1));
    }
    for (const auto& key : keys()) {
        auto it = env.find(env_name(key));
        if (it != env.end()) set(key, it->second);
    }
}

nlohmann::json PipelineConfig::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& key : keys()) j[key] = get(key);
    return j;
}

}  // namespace capforge
