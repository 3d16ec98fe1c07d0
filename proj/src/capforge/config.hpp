// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "capforge/synth.hpp"
#include "capforge/trainer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace capforge {

enum class ProviderKind { File, Mock };

/// Every knob of the pipeline. Defaults follow the reference training setup.
struct PipelineConfig {
    TrainConfig train;
    std::size_t t = 0; // 0 = ceil(C / 10)
    std::size_t n_descriptions = defaults::kQueryTimes;
    double theta_g = 0.85;
    std::size_t ece_bins = 15;
    double seen_fraction = defaults::kSeenFraction;
    std::size_t ssl_per_class = defaults::kSslLabelsPerClass;
    ProviderKind provider = ProviderKind::File;
    std::string descriptions; // path, file provider
    SynthSpec synth;

    /// Sets one key from its textual value. Throws InvalidArgument for unknown
    /// keys or unparsable values.
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    static const std::vector<std::string>& keys();

    /// `key = value` lines, '#' comments, optional [section] headers that
    /// prefix keys as "section.key", optional quotes around values.
    void load_file(const std::filesystem::path& file);

    /// Applies every environment variable named CAPFORGE_<KEY> (dots become underscores, upper case).
    void apply_env(const char* const* envp);

    nlohmann::json to_json() const;
};

/// Parses the TOML-style text into ordered (key, value) pairs.
std::vector<std::pair<std::string, std::string>> parse_kv_text(const std::string& text);

/// Environment variable name for a config key ("synth.n_classes" -> "CAPFORGE_SYNTH_N_CLASSES").
std::string env_name(const std::string& key);

}  // namespace capforge
