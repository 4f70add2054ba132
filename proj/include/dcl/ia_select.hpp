#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dcl/config.hpp"
#include "dcl/data.hpp"

namespace dcl {

struct IaSample {
    std::uint64_t seed = 0;
    double ia = 0.0;
};

/// IA values of one hyperparameter setting across network seeds.
struct IaDistribution {
    std::string hyperparam;
    double value = 0.0;
    std::vector<IaSample> samples;
    double median = 0.0;
    double p25 = 0.0;
    std::size_t sample_count = 0;
};

/// Middle order statistic; mean of the two middle values for even counts.
double median(std::span<const double> values);
/// Linear interpolation between closest ranks, q in [0, 1].
double percentile(std::span<const double> values, double q);

/// Hyperparameters that change the untrained feature space or its clustering.
const std::vector<std::string>& ia_hyperparams();
/// Sets `name` on the config. pca_components = 0 turns PCA off; flags take 0/1.
void set_hyperparam(RunConfig& config, const std::string& name, double value);

/// IA of freshly initialized networks with seeds seed_base + i, i < n_seeds.
/// No training happens. `dataset` must carry labels.
IaDistribution sample_ia(const RunConfig& config, const std::string& hyperparam, double value,
                         const ImageDataset& dataset, std::size_t n_seeds = 20, std::uint64_t seed_base = 0);

/// Sorted by descending median, then higher 25th percentile, then lower value.
/// Throws ConfigError for fewer than 2 candidates or mixed hyperparameters.
std::vector<IaDistribution> rank_candidates(std::vector<IaDistribution> dists);

}  // namespace dcl
