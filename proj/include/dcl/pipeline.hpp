#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dcl/clustering.hpp"
#include "dcl/config.hpp"
#include "dcl/data.hpp"
#include "dcl/nn.hpp"

namespace dcl {

/// What happened in one cycle. `cycle` is 0-based.
struct CycleRecord {
    std::size_t cycle = 0;
    bool clustered = false;
    std::vector<std::int32_t> pseudo_labels;
    /// Full clustering output, present in cycles that clustered.
    std::optional<KMeansResult> clustering;
    double inertia = 0.0;
    std::size_t kmeans_iterations = 0;
    std::optional<double> nmi_prev;   // absent in cycle 0
    std::optional<double> nmi_truth;  // absent without ground truth
    double mean_loss = 0.0;
    double cluster_seconds = 0.0;
    double train_seconds = 0.0;
};

struct RunLog {
    std::vector<CycleRecord> cycles;
    Network network;
    std::size_t clustering_invocations = 0;

    double total_cluster_seconds() const;
};

struct RunHooks {
    /// After every completed cycle.
    std::function<void(const CycleRecord&, const Network&)> on_cycle;
    /// When a cycle fails (e.g. non-finite loss), before the error propagates.
    /// Receives the partially filled record and the network state at failure.
    std::function<void(const CycleRecord&, const Network&, const std::exception&)> on_failure;
};

/// Alternates clustering and training for config.num_cycles cycles.
///
/// Cycle c clusters when halt_cycle is unset or c < halt_cycle: features are
/// extracted in Eval mode, post-processed and clustered into num_clusters
/// groups, and the head is re-initialized with a seed derived from
/// (seed, c). Later cycles reuse the last pseudo-labels and keep the head.
/// Each cycle then trains epochs_per_cycle epochs of SGD on uniformly
/// shuffled, train-transformed batches.
RunLog run_deepcluster(const RunConfig& config, const ImageDataset& train, const RunHooks& hooks = {});

struct ProbeResult {
    std::string layer;
    std::size_t feature_dim = 0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::vector<double> epoch_losses;
};

/// Multinomial logistic regression on the frozen, flattened output of block
/// `layer`, trained with SGD from zero weights. The network itself is never
/// updated. Throws ConfigError for an unknown layer or unlabelled data.
ProbeResult linear_probe(Network& net, const std::string& layer, const ImageDataset& train, const ImageDataset& test,
                         const TransformSpec& spec, const ProbeConfig& probe, std::uint64_t seed);

struct HaltSweepEntry {
    std::optional<std::size_t> halt_cycle;
    double probe_accuracy = 0.0;
    double cluster_seconds = 0.0;
    std::size_t clustering_invocations = 0;
    RunLog log;
};

/// One run per halt point (nullopt = never halt) with everything else fixed.
std::vector<HaltSweepEntry> halt_sweep(const RunConfig& config, const std::vector<std::optional<std::size_t>>& halt_points,
                                       const ImageDataset& train, const ImageDataset& test);

// ---------------------------------------------------------------------------
// Checkpoints: "DCKP", u32 version, graph JSON, then named tensors
// (parameters followed by batchnorm buffers), all little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Network& net, const nlohmann::json& metadata = {});
Network load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

nlohmann::json graph_to_json(const NetworkGraph& g);
NetworkGraph graph_from_json(const nlohmann::json& j);

}  // namespace dcl
