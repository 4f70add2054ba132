#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dcl/clustering.hpp"
#include "dcl/data.hpp"
#include "dcl/features.hpp"
#include "dcl/nn.hpp"

namespace dcl {

/// Normalized mutual information I(a;b) / sqrt(H(a) H(b)) with natural logs.
///
/// If both partitions consist of a single group the result is 1; if exactly
/// one does, 0. The value is exactly symmetric in its arguments and exactly
/// invariant under relabeling of either partition: the summands are sorted
/// before accumulation, so the result depends only on the multiset of
/// contingency-table cells. Throws Error on empty or unequal-length input.
double nmi(std::span<const std::int32_t> a, std::span<const std::int32_t> b);

/// NMI between the pseudo-labels of two consecutive cycles.
inline double cycle_consistency(std::span<const std::int32_t> prev, std::span<const std::int32_t> curr) {
    return nmi(prev, curr);
}

/// Fraction of positions where the two label vectors agree.
double accuracy(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth);

/// Clustering-side settings shared by IA and the training loop.
struct ClusterSettings {
    std::size_t num_clusters = 5;
    std::optional<std::size_t> pca_components;  // nullopt = PCA off
    double whitening_epsilon = 1e-5;
    KMeansOptions kmeans;
    std::size_t batch_size = 256;  // feature-extraction batch
};

/// Pseudo-labels for a dataset: features -> [PCA + whitening] -> L2 -> KMeans.
KMeansResult cluster_dataset(Network& net, const ImageDataset& ds, const TransformSpec& spec,
                             const ClusterSettings& settings, std::uint64_t seed);

/// Initial alignment: NMI between the ground truth and the KMeans partition
/// of the network's features. Intended for an untrained network; the network
/// parameters are not modified. Throws ConfigError if `ds` has no labels.
double initial_alignment(Network& net, const ImageDataset& ds, const TransformSpec& spec,
                         const ClusterSettings& settings, std::uint64_t seed);

}  // namespace dcl
