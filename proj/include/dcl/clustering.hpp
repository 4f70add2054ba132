#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dcl/features.hpp"

namespace dcl {

struct KMeansOptions {
    std::size_t max_iter = 100;
    /// Stop once (previous - current) / previous inertia drops below this.
    double tol = 1e-4;
};

struct KMeansResult {
    std::size_t k = 0;
    std::size_t dims = 0;
    std::vector<double> centroids;  // k x dims
    std::vector<std::int32_t> assignments;
    double inertia = 0.0;
    std::size_t iterations_run = 0;
    /// Inertia after initialization and after every Lloyd iteration.
    std::vector<double> inertia_history;
};

/// Lloyd's algorithm with k-means++ seeding under squared Euclidean distance.
/// Every cluster is non-empty in the result: an empty cluster takes over the
/// point of the largest cluster that lies farthest from that cluster's centroid.
/// Throws ConfigError when k < 2 or k > N.
KMeansResult kmeans(const FeatureMatrix& features, std::size_t k, std::uint64_t seed, const KMeansOptions& options = {});

/// Cluster assignments as per-sample training targets.
std::vector<std::int32_t> pseudo_labels(const KMeansResult& result);

/// "KMNS", u32 K, u32 D, K*D f32 centroids, u32 N, N u32 assignments (little-endian).
void write_kmeans(const std::filesystem::path& path, const KMeansResult& result);

}  // namespace dcl
