#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "ypose/data.hpp"
#include "ypose/model.hpp"
#include "ypose/train.hpp"

namespace ypose {

/// User/config mistakes: bad keys, unparsable values, inconsistent settings.
/// The CLI maps these to exit code 1 (runtime failures exit 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Everything a run needs, assembled from (in order) variant preset, config
/// file, then command-line flags; later sources win.
struct RunConfig {
    ModelSpec model;
    OptimizerConfig optimizer;
    SplitRatios ratios;
    int epochs = 50;
    int batch_size = 32;
    std::uint64_t seed = 1;
    bool roi_enabled = true;
    bool refinement_enabled = true;
    std::string head_level = "auto";  // auto | coarse | mid | fine
    std::filesystem::path manifest_path;
    std::filesystem::path hierarchy_path;
    std::filesystem::path out_dir = "out";
    bool out_dir_set = false;  // whether a config/flag chose out_dir explicitly
    std::filesystem::path checkpoint_path;

    /// Spec actually used for building: refinement_enabled=false zeroes the
    /// unit count without touching the configured value.
    ModelSpec effective_model() const;
    std::optional<std::vector<int>> head_levels() const;
    void validate() const;
};

/// Applies one `key=value` setting. Unknown keys and bad values raise
/// ConfigError naming the key.
void apply_config_key(RunConfig& config, const std::string& key, const std::string& value);

/// Flat key=value file, one per line, `#` comments and blank lines ignored.
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

/// Named presets: ypose, ypose-lite, b0, b4, b5, mv2, toy.
void apply_variant(RunConfig& config, const std::string& variant);

}  // namespace ypose
