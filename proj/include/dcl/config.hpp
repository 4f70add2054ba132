#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "dcl/data.hpp"
#include "dcl/metrics.hpp"
#include "dcl/nn.hpp"

namespace dcl {

inline constexpr int kConfigFormatVersion = 1;

struct DatasetConfig {
    std::string name = "fmnist";
    /// "idx" (<name>/{train,t10k}-{images-idx3,labels-idx1}-ubyte) or
    /// "raw" (<name>/{train,test}_{images,labels}.bin, NCHW bytes).
    std::string format = "idx";
    std::size_t max_samples = 0;       // 0 = whole train split
    std::size_t test_max_samples = 0;  // 0 = whole test split
    std::uint64_t subset_seed = 0;     // shuffle used for both truncations
    std::size_t channels = 1;
    std::size_t image_size = 28;
    std::size_t num_classes = 10;
};

struct ProbeConfig {
    std::string layer;  // empty = topmost block
    std::size_t epochs = 20;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::size_t batch_size = 128;
};

/// Every hyperparameter of a run. Defaults are the FMNIST / LeNet setting.
struct RunConfig {
    int format_version = kConfigFormatVersion;
    std::uint64_t seed = 0;

    DatasetConfig dataset;
    TransformSpec transforms;
    Architecture architecture = Architecture::LeNet5Variant;
    bool use_batchnorm = true;
    std::vector<std::size_t> filters;

    double learning_rate = 0.1;
    double weight_decay = 0.001;
    double momentum = 0.1;
    std::size_t batch_size = 128;
    std::size_t num_cycles = 50;
    std::size_t epochs_per_cycle = 1;

    std::size_t num_clusters = 5;
    std::optional<std::size_t> pca_components;
    /// Clustering runs in cycles 0 .. halt_cycle-1 only; later cycles reuse
    /// the pseudo-labels of cycle halt_cycle-1.
    std::optional<std::size_t> halt_cycle;
    std::size_t kmeans_max_iter = 100;
    double kmeans_tol = 1e-4;
    double whitening_epsilon = 1e-5;
    std::size_t extract_batch_size = 256;

    ProbeConfig probe;
    /// Write a checkpoint every this many cycles (0 = final checkpoint only).
    std::size_t checkpoint_every = 0;
    /// Dump centroids and assignments of every clustering step.
    bool dump_clusters = false;

    /// Throws ConfigError naming the offending key.
    void validate() const;

    NetworkConfig network_config() const;
    ClusterSettings cluster_settings() const;
    SgdOptions sgd_options() const;
    /// Probe layer with the architecture default filled in.
    std::string probe_layer() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Strict parse: `format_version` is required, unknown keys are errors.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Reads and parses a config file; syntax errors report line and column.
nlohmann::json read_json_file(const std::filesystem::path& path);
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies "section.key=value" (or bare "key=value" for unique keys) overrides.
void apply_override(RunConfig& config, const std::string& assignment);

}  // namespace dcl
