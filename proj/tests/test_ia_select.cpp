#include <algorithm>

#include <gtest/gtest.h>

#include "dcl/error.hpp"
#include "dcl/ia_select.hpp"
#include "support/synthetic.hpp"

using namespace dcl;

namespace {

RunConfig ia_config() {
    RunConfig c;
    c.dataset.num_classes = 4;
    c.num_clusters = 4;
    return c;
}

const ImageDataset& data() {
    static const ImageDataset ds = fixture::banded_dataset(120, 4, 28, 21);
    return ds;
}

IaDistribution dist(double value, std::vector<double> ias) {
    IaDistribution d;
    d.hyperparam = "num_clusters";
    d.value = value;
    for (std::size_t i = 0; i < ias.size(); ++i) d.samples.push_back({i, ias[i]});
    d.sample_count = ias.size();
    d.median = median(ias);
    d.p25 = percentile(ias, 0.25);
    return d;
}

}  // namespace

TEST(Median, MatchesSortOracle) {
    Rng rng(1);
    for (std::size_t n = 1; n < 30; ++n) {
        std::vector<double> v(n);
        for (auto& x : v) x = rng.uniform();
        std::vector<double> s = v;
        std::sort(s.begin(), s.end());
        const double expected = n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
        EXPECT_EQ(median(v), expected);
    }
    EXPECT_THROW(median(std::vector<double>{}), Error);
}

TEST(Median, AddingTheMedianKeepsIt) {
    std::vector<double> v{0.3, 0.1, 0.9, 0.4, 0.7};
    const double m = median(v);
    v.push_back(m);
    EXPECT_EQ(median(v), m);
}

TEST(Percentile, LinearInterpolation) {
    const std::vector<double> v{1, 2, 3, 4, 5};
    EXPECT_EQ(percentile(v, 0.25), 2.0);
    EXPECT_EQ(percentile(std::vector<double>{1, 2, 3, 4}, 0.25), 1.75);
    EXPECT_EQ(percentile(v, 0.0), 1.0);
    EXPECT_EQ(percentile(v, 1.0), 5.0);
}

TEST(Rank, ByMedianDescending) {
    const auto ranked = rank_candidates({dist(10, {0.05}), dist(50, {0.12}), dist(100, {0.11})});
    EXPECT_EQ(ranked[0].median, 0.12);
    EXPECT_EQ(ranked[1].median, 0.11);
    EXPECT_EQ(ranked[2].median, 0.05);
}

TEST(Rank, TiesBrokenByP25ThenValue) {
    const auto ranked = rank_candidates({dist(10, {0.1, 0.2, 0.3}), dist(20, {0.15, 0.2, 0.25}), dist(5, {0.15, 0.2, 0.25})});
    EXPECT_EQ(ranked[0].value, 5.0);
    EXPECT_EQ(ranked[1].value, 20.0);
    EXPECT_EQ(ranked[2].value, 10.0);
}

TEST(Rank, RejectsDegenerateInput) {
    EXPECT_THROW(rank_candidates({dist(10, {0.1})}), ConfigError);
    IaDistribution other = dist(3, {0.2});
    other.hyperparam = "pca_components";
    EXPECT_THROW(rank_candidates({dist(10, {0.1}), other}), ConfigError);
}

TEST(SampleIa, SeedsAreArithmeticAndDeterministic) {
    const IaDistribution a = sample_ia(ia_config(), "num_clusters", 4, data(), 3, 10);
    const IaDistribution b = sample_ia(ia_config(), "num_clusters", 4, data(), 3, 10);
    ASSERT_EQ(a.samples.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(a.samples[i].seed, 10 + i);
        EXPECT_EQ(a.samples[i].ia, b.samples[i].ia);
    }
    EXPECT_EQ(a.sample_count, 3u);
}

TEST(SampleIa, SingleSeedMedianIsTheSample) {
    const IaDistribution d = sample_ia(ia_config(), "num_clusters", 3, data(), 1, 0);
    EXPECT_EQ(d.median, d.samples[0].ia);
}

TEST(SampleIa, MatchesDirectComputationOnUntrainedNetwork) {
    RunConfig c = ia_config();
    const IaDistribution d = sample_ia(c, "pca_components", 8, data(), 1, 4);
    c.pca_components = 8;
    Network net = build_network(c.network_config(), 4);
    const auto fresh = feature_hash(net);
    EXPECT_EQ(initial_alignment(net, data(), c.transforms, c.cluster_settings(), 4), d.samples[0].ia);
    EXPECT_EQ(feature_hash(net), fresh);
}

TEST(SetHyperparam, KnownNamesAndErrors) {
    RunConfig c = ia_config();
    set_hyperparam(c, "pca_components", 0);
    EXPECT_FALSE(c.pca_components.has_value());
    set_hyperparam(c, "sobel", 1);
    EXPECT_TRUE(c.transforms.sobel);
    EXPECT_THROW(set_hyperparam(c, "learning_rate", 0.1), ConfigError);
    EXPECT_THROW(set_hyperparam(c, "use_batchnorm", 0.5), ConfigError);
    EXPECT_THROW(set_hyperparam(c, "num_clusters", 1), ConfigError);
    EXPECT_THROW(set_hyperparam(c, "num_clusters", 2.5), ConfigError);
}
