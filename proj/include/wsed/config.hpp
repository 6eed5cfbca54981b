#ifndef WSED_CONFIG_HPP
#define WSED_CONFIG_HPP

#include <filesystem>
#include <optional>
#include <string>

#include "wsed/data.hpp"
#include "wsed/model.hpp"
#include "wsed/trainer.hpp"

namespace wsed {

/// Run configuration loaded from a `key = value` file (one pair per line,
/// `#` comments). Relative paths resolve against the config file's
/// directory. See README for the key reference.
struct RunConfig {
    // paths
    std::filesystem::path audio_root;
    std::filesystem::path weak_manifest;          // training bags
    std::filesystem::path val_manifest;           // optional validation bags
    std::filesystem::path val_strong;             // strong truth for validation
    std::filesystem::path predict_manifest;       // bags for `predict` (default: val_manifest)
    std::filesystem::path feature_dir;            // feature cache
    std::filesystem::path output_dir;

    FeatureConfig features;
    ModelConfig model;
    TrainConfig train;
    LabelMap label_map;
    int threads = 0; // 0: hardware concurrency

    /// Feature cache path for one recording id.
    std::filesystem::path feature_path(const std::string& id) const {
        return feature_dir / (id + ".wsmf");
    }
};

/// Parses and validates a run config. Referenced input paths must resolve;
/// output directories are created lazily by the subcommands.
RunConfig load_run_config(const std::filesystem::path& path);

} // namespace wsed

#endif
