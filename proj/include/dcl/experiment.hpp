#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcl/config.hpp"
#include "dcl/ia_select.hpp"
#include "dcl/pipeline.hpp"

namespace dcl {

inline constexpr int kManifestFormatVersion = 1;

/// Everything needed to reproduce a command: which command, the resolved
/// config, command arguments and where the outputs go. Always written to
/// <out>/manifest.json before any other output.
struct ExperimentManifest {
    int format_version = kManifestFormatVersion;
    std::string command;  // run, probe, ia-sample, k-sweep, seed-sweep, halt-sweep, pca-sweep, export
    RunConfig config;
    std::filesystem::path out_dir;
    nlohmann::json args = nlohmann::json::object();
};

nlohmann::json to_json(const ExperimentManifest& m);
ExperimentManifest manifest_from_json(const nlohmann::json& j);
/// Creates out_dir and writes manifest.json.
void write_manifest(const ExperimentManifest& m);

/// $DCL_DATA_ROOT, or ./data when unset.
std::filesystem::path data_root_from_env();

struct Datasets {
    ImageDataset train;
    ImageDataset test;
};

/// Loads both splits named by config.dataset under `root` and applies the
/// max_samples truncations.
Datasets load_datasets(const RunConfig& config, const std::filesystem::path& root);

/// cycle, clustered, inertia, kmeans_iterations, nmi_prev, nmi_truth, loss.
/// Holds only values that are a pure function of the config and data.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<CycleRecord>& cycles);
/// cycle, cluster_seconds, train_seconds (wall clock).
void write_timings_csv(const std::filesystem::path& path, const std::vector<CycleRecord>& cycles);

struct RunOutputs {
    RunLog log;
    ProbeResult probe;
};

/// run_deepcluster + linear_probe, writing into `out_dir`:
/// config.json, metrics.csv, timings.csv, checkpoints/final.dckp (plus
/// cycle_NNN.dckp every checkpoint_every cycles, clusters/cycle_NNN.kmns when
/// dump_clusters is set) and probe.json. A failing cycle leaves
/// checkpoints/failure.dckp and failure.json behind.
RunOutputs execute_run(const RunConfig& config, const Datasets& data, const std::filesystem::path& out_dir);

struct SweepRow {
    double value = 0.0;
    std::optional<double> ia;
    double probe_accuracy = 0.0;
};

/// Axis names accepted by execute_sweep.
const std::vector<std::string>& sweep_axes();

/// One child run per value (sorted ascending) in <out>/<axis>_<value>/.
/// Appends to <out>/sweep.csv as each child finishes, so completed rows
/// survive a later failure.
std::vector<SweepRow> execute_sweep(const RunConfig& base, const std::string& axis, std::vector<double> values,
                                    const Datasets& data, const std::filesystem::path& out_dir);

/// IA distributions for each value; writes ia_samples.csv and the ranked ia_summary.csv / ia_summary.json.
std::vector<IaDistribution> execute_ia_sample(const RunConfig& config, const std::string& hyperparam,
                                              const std::vector<double>& values, std::size_t n_seeds,
                                              std::uint64_t seed_base, const Datasets& data,
                                              const std::filesystem::path& out_dir);

/// Probes a saved network; writes probe.json.
ProbeResult execute_probe(const RunConfig& config, const std::filesystem::path& checkpoint, const std::string& layer,
                          const Datasets& data, const std::filesystem::path& out_dir);

struct ExportOptions {
    std::string what = "features";  // features | metrics
    std::string layer;              // features: block to export, empty = topmost
    bool csv = false;               // features: also write features.csv
};

/// Exports from a finished run directory into `out_dir`.
/// features: features.fmat (and labels.csv, optionally features.csv) from the
/// final checkpoint over the train split. metrics: metrics.json combining
/// metrics.csv and probe.json.
void execute_export(const std::filesystem::path& run_dir, const ExportOptions& options,
                    const std::filesystem::path& data_root, const std::filesystem::path& out_dir);

/// Writes the manifest, then runs the command it describes.
void execute_manifest(const ExperimentManifest& m, const std::filesystem::path& data_root);

/// Parses "a,b,c" into numbers.
std::vector<double> parse_value_list(const std::string& text);

}  // namespace dcl
