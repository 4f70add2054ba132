#include <cmath>

#include <gtest/gtest.h>

#include "dcl/error.hpp"
#include "dcl/metrics.hpp"
#include "dcl/rng.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace dcl;

namespace {

std::vector<std::int32_t> random_labels(Rng& rng, std::size_t n, std::size_t k) {
    std::vector<std::int32_t> v(n);
    for (auto& x : v) x = static_cast<std::int32_t>(rng.below(k));
    return v;
}

}  // namespace

TEST(Nmi, IdenticalAndRelabeledGiveOne) {
    const std::vector<std::int32_t> a{0, 0, 1, 2, 2, 2, 1};
    EXPECT_NEAR(nmi(a, a), 1.0, 1e-9);
    const std::vector<std::int32_t> b{5, 5, 9, 3, 3, 3, 9};
    EXPECT_NEAR(nmi(a, b), 1.0, 1e-9);
}

TEST(Nmi, IndependentHandComputed) {
    const std::vector<std::int32_t> a{0, 0, 1, 1}, b{0, 1, 0, 1};
    EXPECT_NEAR(nmi(a, b), 0.0, 1e-9);
}

TEST(Nmi, MatchesOracleWithExactSymmetry) {
    Rng rng(8);
    for (int t = 0; t < 200; ++t) {
        const auto a = random_labels(rng, 100, 1 + rng.below(10));
        const auto b = random_labels(rng, 100, 1 + rng.below(10));
        const double v = nmi(a, b);
        EXPECT_NEAR(v, static_cast<double>(fixture::nmi_oracle(a, b)), 1e-10);
        EXPECT_EQ(v, nmi(b, a));
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Nmi, PermutationInvariant) {
    Rng rng(9);
    const auto a = random_labels(rng, 100, 6), b = random_labels(rng, 100, 4);
    std::vector<std::int32_t> perm{3, 5, 0, 1, 4, 2};
    std::vector<std::int32_t> pa(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) pa[i] = perm[a[i]] + 100;
    EXPECT_EQ(nmi(pa, b), nmi(a, b));
}

TEST(Nmi, SingleClusterConventions) {
    const std::vector<std::int32_t> one(5, 2), two{0, 1, 0, 1, 1};
    EXPECT_EQ(nmi(one, one), 1.0);
    EXPECT_EQ(nmi(one, two), 0.0);
    EXPECT_EQ(nmi(two, one), 0.0);
}

TEST(Nmi, IndependentPartitionsAreNearZero) {
    Rng rng(10);
    const auto a = random_labels(rng, 1000, 10), b = random_labels(rng, 1000, 10);
    EXPECT_LT(nmi(a, b), 0.05);
    EXPECT_LT(cycle_consistency(a, b), 0.05);
    EXPECT_EQ(cycle_consistency(a, a), 1.0);
}

TEST(Nmi, RejectsBadInput) {
    const std::vector<std::int32_t> a{0, 1}, b{0}, empty;
    EXPECT_THROW(nmi(a, b), Error);
    EXPECT_THROW(nmi(empty, empty), Error);
}

TEST(Accuracy, Examples) {
    const std::vector<std::int32_t> a{0, 1, 1, 0};
    EXPECT_EQ(accuracy(a, a), 1.0);
    EXPECT_EQ(accuracy(a, std::vector<std::int32_t>{1, 0, 0, 1}), 0.0);
    EXPECT_EQ(accuracy(std::vector<std::int32_t>{0, 1, 2, 3}, std::vector<std::int32_t>{0, 1, 0, 0}), 0.5);
}

namespace {

// A network whose "features" are the class-band intensities: a single 1x1
// conv with weight 1 followed by a pool pyramid keeps band structure.
NetworkGraph identity_graph(std::size_t size) {
    NetworkGraph g;
    g.input_channels = 1;
    g.input_height = g.input_width = size;
    g.blocks = {{"conv1", 1, 1, 0, false, false}};
    g.head_width = 2;
    return g;
}

}  // namespace

TEST(InitialAlignment, SeparatedClassesGiveOne) {
    const ImageDataset ds = fixture::banded_dataset(60, 3, 6, 1);
    Network net(identity_graph(6), 0);
    net.parameters()[0]->value.fill(1.0f);
    TransformSpec spec;
    spec.resize_to = spec.crop_size = 6;
    spec.normalize_mean = {0.0};
    spec.normalize_std = {1.0};
    ClusterSettings s;
    s.num_clusters = 3;
    EXPECT_NEAR(initial_alignment(net, ds, spec, s, 4), 1.0, 1e-9);
}

TEST(InitialAlignment, ShuffledLabelsAreNearZero) {
    ImageDataset ds = fixture::banded_dataset(1000, 10, 10, 2);
    Rng rng(3);
    rng.shuffle(*ds.labels);
    Network net(identity_graph(10), 0);
    net.parameters()[0]->value.fill(1.0f);
    TransformSpec spec;
    spec.resize_to = spec.crop_size = 10;
    ClusterSettings s;
    s.num_clusters = 10;
    EXPECT_LT(initial_alignment(net, ds, spec, s, 4), 0.05);
}

TEST(InitialAlignment, DeterministicAndPure) {
    const ImageDataset ds = fixture::banded_dataset(80, 4, 12, 5);
    NetworkGraph g = identity_graph(12);
    g.blocks = {{"conv1", 3, 3, 1, true, true}};
    Network net(g, 7);
    const auto hash = feature_hash(net);
    TransformSpec spec;
    spec.resize_to = spec.crop_size = 12;
    ClusterSettings s;
    s.num_clusters = 4;
    s.pca_components = 8;
    const double a = initial_alignment(net, ds, spec, s, 1), b = initial_alignment(net, ds, spec, s, 1);
    EXPECT_EQ(a, b);
    EXPECT_EQ(feature_hash(net), hash);
    ImageDataset unlabelled = ds;
    unlabelled.labels.reset();
    EXPECT_THROW(initial_alignment(net, unlabelled, spec, s, 1), ConfigError);
}
