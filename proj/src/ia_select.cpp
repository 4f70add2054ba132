#include "dcl/ia_select.hpp"

#include <algorithm>
#include <cmath>

#include "dcl/metrics.hpp"

namespace dcl {

double median(std::span<const double> values) { return percentile(values, 0.5); }

double percentile(std::span<const double> values, double q) {
    if (values.empty()) throw Error("percentile of an empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw Error("percentile rank must lie in [0, 1]");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    if (lo == hi) return v[lo];
    return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

const std::vector<std::string>& ia_hyperparams() {
    static const std::vector<std::string> names{"num_clusters", "pca_components", "use_batchnorm", "sobel",
                                                "whitening_epsilon"};
    return names;
}

void set_hyperparam(RunConfig& config, const std::string& name, double value) {
    auto as_count = [&](const char* key) {
        if (value < 0.0 || value != std::floor(value)) throw ConfigError(key, "expected a non-negative integer value");
        return static_cast<std::size_t>(value);
    };
    auto as_flag = [&](const char* key) {
        if (value != 0.0 && value != 1.0) throw ConfigError(key, "expected 0 or 1");
        return value == 1.0;
    };
    if (name == "num_clusters") {
        config.num_clusters = as_count("num_clusters");
    } else if (name == "pca_components") {
        const auto d = as_count("pca_components");
        config.pca_components = d == 0 ? std::nullopt : std::optional<std::size_t>(d);
    } else if (name == "use_batchnorm") {
        config.use_batchnorm = as_flag("use_batchnorm");
    } else if (name == "sobel") {
        config.transforms.sobel = as_flag("sobel");
    } else if (name == "whitening_epsilon") {
        config.whitening_epsilon = value;
    } else {
        throw ConfigError(name, "not an IA hyperparameter (training-only settings do not change the initial alignment)");
    }
    config.validate();
}

IaDistribution sample_ia(const RunConfig& config, const std::string& hyperparam, double value,
                         const ImageDataset& dataset, std::size_t n_seeds, std::uint64_t seed_base) {
    if (n_seeds == 0) throw ConfigError("seeds", "need at least one seed");
    if (!dataset.labels) throw ConfigError("dataset", "IA sampling needs ground-truth labels");
    RunConfig c = config;
    set_hyperparam(c, hyperparam, value);

    IaDistribution dist;
    dist.hyperparam = hyperparam;
    dist.value = value;
    const NetworkConfig net_config = c.network_config();
    const ClusterSettings settings = c.cluster_settings();
    std::vector<double> values;
    for (std::size_t i = 0; i < n_seeds; ++i) {
        const std::uint64_t seed = seed_base + i;
        Network net = build_network(net_config, seed);
        const double ia = initial_alignment(net, dataset, c.transforms, settings, seed);
        dist.samples.push_back({seed, ia});
        values.push_back(ia);
    }
    dist.sample_count = dist.samples.size();
    dist.median = median(values);
    dist.p25 = percentile(values, 0.25);
    return dist;
}

std::vector<IaDistribution> rank_candidates(std::vector<IaDistribution> dists) {
    if (dists.size() < 2) throw ConfigError("values", "ranking needs at least two candidates");
    for (const auto& d : dists) {
        if (d.hyperparam != dists.front().hyperparam) {
            throw ConfigError("hyperparam", "cannot rank candidates of different hyperparameters");
        }
    }
    std::stable_sort(dists.begin(), dists.end(), [](const IaDistribution& a, const IaDistribution& b) {
        if (a.median != b.median) return a.median > b.median;
        if (a.p25 != b.p25) return a.p25 > b.p25;
        return a.value < b.value;
    });
    return dists;
}

}  // namespace dcl
