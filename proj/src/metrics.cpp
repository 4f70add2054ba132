#include "dcl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

namespace dcl {

namespace {

/// Dense relabeling 0..m-1 in order of first appearance, plus group sizes.
std::vector<std::size_t> compact(std::span<const std::int32_t> labels, std::vector<std::size_t>& ids) {
    std::unordered_map<std::int32_t, std::size_t> index;
    std::vector<std::size_t> sizes;
    ids.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, inserted] = index.try_emplace(labels[i], sizes.size());
        if (inserted) sizes.push_back(0);
        ++sizes[it->second];
        ids[i] = it->second;
    }
    return sizes;
}

double sorted_sum(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
}

double entropy(const std::vector<std::size_t>& sizes, double n) {
    std::vector<double> terms;
    terms.reserve(sizes.size());
    for (auto s : sizes) {
        const double p = static_cast<double>(s) / n;
        terms.push_back(-p * std::log(p));
    }
    return sorted_sum(terms);
}

}  // namespace

double nmi(std::span<const std::int32_t> a, std::span<const std::int32_t> b) {
    if (a.size() != b.size()) throw Error("nmi: partitions have different lengths");
    if (a.empty()) throw Error("nmi: empty partitions");
    const double n = static_cast<double>(a.size());

    std::vector<std::size_t> ia, ib;
    const auto sa = compact(a, ia);
    const auto sb = compact(b, ib);
    if (sa.size() == 1 && sb.size() == 1) return 1.0;
    if (sa.size() == 1 || sb.size() == 1) return 0.0;

    std::unordered_map<std::uint64_t, std::size_t> cells;
    for (std::size_t i = 0; i < ia.size(); ++i) ++cells[(static_cast<std::uint64_t>(ia[i]) << 32) | ib[i]];

    std::vector<double> terms;
    terms.reserve(cells.size());
    for (const auto& [key, count] : cells) {
        const double nij = static_cast<double>(count);
        const double marg = static_cast<double>(sa[key >> 32]) * static_cast<double>(sb[key & 0xffffffffULL]);
        terms.push_back(nij / n * std::log(n * nij / marg));
    }
    const double mi = sorted_sum(terms);
    const double ha = entropy(sa, n);
    const double hb = entropy(sb, n);
    const double denom = std::sqrt(ha * hb);
    return std::clamp(mi / denom, 0.0, 1.0);
}

double accuracy(std::span<const std::int32_t> predicted, std::span<const std::int32_t> truth) {
    if (predicted.size() != truth.size()) throw Error("accuracy: label vectors have different lengths");
    if (predicted.empty()) throw Error("accuracy: empty label vectors");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

KMeansResult cluster_dataset(Network& net, const ImageDataset& ds, const TransformSpec& spec,
                             const ClusterSettings& settings, std::uint64_t seed) {
    const FeatureMatrix raw = extract_features(net, ds, spec, settings.batch_size);
    std::optional<PcaModel> pca;
    if (settings.pca_components) pca = fit_pca(raw, *settings.pca_components, settings.whitening_epsilon);
    const FeatureMatrix post = postprocess(raw, pca);
    return kmeans(post, settings.num_clusters, seed, settings.kmeans);
}

double initial_alignment(Network& net, const ImageDataset& ds, const TransformSpec& spec,
                         const ClusterSettings& settings, std::uint64_t seed) {
    if (!ds.labels) throw ConfigError("dataset", "initial alignment needs ground-truth labels");
    const KMeansResult r = cluster_dataset(net, ds, spec, settings, seed);
    return nmi(*ds.labels, r.assignments);
}

}  // namespace dcl
