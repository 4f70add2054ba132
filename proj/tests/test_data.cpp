#include <numeric>

#include <gtest/gtest.h>

#include "dcl/data.hpp"
#include "dcl/error.hpp"
#include "support/synthetic.hpp"

using namespace dcl;
using fixture::TempDir;

namespace {

std::vector<std::uint8_t> iota_bytes(std::size_t n) {
    std::vector<std::uint8_t> v(n);
    std::iota(v.begin(), v.end(), std::uint8_t{0});
    return v;
}

}  // namespace

TEST(Idx, ParsesHandBuiltImageFile) {
    const auto bytes = fixture::idx_bytes(0x08, {2, 3, 3}, iota_bytes(18));
    ASSERT_EQ(bytes.size(), 4u + 12u + 18u);
    EXPECT_EQ(bytes[3], 0x03);
    const IdxArray a = parse_idx(bytes);
    EXPECT_EQ(a.dims, (std::vector<std::uint32_t>{2, 3, 3}));
    EXPECT_EQ(a.data, iota_bytes(18));
}

TEST(Idx, LoadsImagesAndLabels) {
    TempDir dir("idx");
    fixture::write_bytes(dir / "img", fixture::idx_bytes(0x08, {2, 3, 3}, iota_bytes(18)));
    fixture::write_bytes(dir / "lab", fixture::idx_bytes(0x08, {2}, {1, 0}));
    const ImageDataset ds = load_idx(dir / "img", dir / "lab", 10);
    EXPECT_EQ(ds.count, 2u);
    EXPECT_EQ(ds.channels, 1u);
    EXPECT_EQ(ds.height, 3u);
    EXPECT_EQ(ds.width, 3u);
    EXPECT_EQ(ds.image(1)[0], 9);
    EXPECT_EQ(*ds.labels, (std::vector<std::int32_t>{1, 0}));
}

TEST(Idx, CountMismatchIsAnError) {
    TempDir dir("idx");
    fixture::write_bytes(dir / "img", fixture::idx_bytes(0x08, {10, 2, 2}, std::vector<std::uint8_t>(40)));
    fixture::write_bytes(dir / "lab", fixture::idx_bytes(0x08, {9}, std::vector<std::uint8_t>(9)));
    try {
        load_idx(dir / "img", dir / "lab", 10);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("count mismatch"), std::string::npos);
    }
}

TEST(Idx, BadMagicIsAnError) {
    const auto bytes = fixture::idx_bytes(0x08, {2, 3}, iota_bytes(6));
    EXPECT_EQ(bytes[3], 0x02);
    try {
        parse_idx(bytes);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("bad IDX magic"), std::string::npos);
    }
    EXPECT_THROW(parse_idx(fixture::idx_bytes(0x0D, {4}, iota_bytes(4))), DataError);
}

TEST(Idx, TruncatedPayloadIsAnError) {
    EXPECT_THROW(parse_idx(fixture::idx_bytes(0x08, {2, 3, 3}, iota_bytes(17))), DataError);
    EXPECT_THROW(parse_idx(std::vector<std::uint8_t>{0, 0, 8}), DataError);
}

TEST(Idx, LabelOutOfRangeIsAnError) {
    TempDir dir("idx");
    fixture::write_bytes(dir / "img", fixture::idx_bytes(0x08, {1, 2, 2}, iota_bytes(4)));
    fixture::write_bytes(dir / "lab", fixture::idx_bytes(0x08, {1}, {10}));
    EXPECT_THROW(load_idx(dir / "img", dir / "lab", 10), DataError);
}

TEST(Raw, LoadsNchwBytes) {
    TempDir dir("raw");
    fixture::write_bytes(dir / "img", iota_bytes(24));
    fixture::write_bytes(dir / "lab", {0, 1});
    const ImageDataset ds = load_raw_nchw(dir / "img", dir / "lab", 3, 2, 2, 2);
    EXPECT_EQ(ds.count, 2u);
    EXPECT_EQ(ds.image(1)[0], 12);
    fixture::write_bytes(dir / "bad", iota_bytes(23));
    EXPECT_THROW(load_raw_nchw(dir / "bad", std::nullopt, 3, 2, 2, 2), DataError);
}

TEST(Subset, IsSeededAndKeepsLabelsAligned) {
    const ImageDataset ds = fixture::banded_dataset(50, 5, 10, 1);
    const ImageDataset a = subset(ds, 20, 7), b = subset(ds, 20, 7), c = subset(ds, 20, 8);
    EXPECT_EQ(a.count, 20u);
    EXPECT_EQ(a.pixels, b.pixels);
    EXPECT_NE(a.pixels, c.pixels);
    EXPECT_EQ(subset(ds, 0, 1).pixels, ds.pixels);
    for (std::size_t i = 0; i < a.count; ++i) {
        const auto img = a.image(i);
        std::size_t found = ds.count;
        for (std::size_t j = 0; j < ds.count; ++j) {
            if (std::equal(img.begin(), img.end(), ds.image(j).begin())) found = j;
        }
        ASSERT_LT(found, ds.count);
        EXPECT_EQ((*a.labels)[i], (*ds.labels)[found]);
    }
}

TEST(Transforms, ConstantImageAtMeanNormalizesToZero) {
    ImageDataset ds;
    ds.count = 1;
    ds.height = ds.width = 6;
    ds.pixels.assign(36, 77);
    TransformSpec spec;
    spec.normalize_mean = {77 / 255.0};
    spec.normalize_std = {1.0};
    spec.resize_to = spec.crop_size = 6;
    const std::vector<std::size_t> idx{0};
    const Tensor t = transform_images(ds, idx, spec, Phase::Cluster);
    for (float v : t.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Transforms, CenterCropKeepsRowsAndColumns2To33) {
    Tensor x({1, 1, 36, 36});
    for (std::size_t y = 0; y < 36; ++y) {
        for (std::size_t c = 0; c < 36; ++c) x.at(0, 0, y, c) = static_cast<float>(y * 100 + c);
    }
    const Tensor out = center_crop(x, 32);
    ASSERT_EQ(out.shape(), (Shape{1, 1, 32, 32}));
    EXPECT_EQ(out.at(0, 0, 0, 0), 2 * 100 + 2);
    EXPECT_EQ(out.at(0, 0, 31, 31), 33 * 100 + 33);
}

TEST(Transforms, ResizeIsIdentityAtSameSizeAndPreservesConstants) {
    Tensor x({1, 1, 4, 4}, 0.25f);
    x[5] = 3.0f;
    EXPECT_EQ(resize_bilinear(x, 4), x);
    const Tensor flat({1, 1, 5, 5}, 0.5f);
    const Tensor up = resize_bilinear(flat, 9);
    for (float v : up.values()) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(Transforms, ClusterPhaseIsDeterministic) {
    const ImageDataset ds = fixture::banded_dataset(6, 3, 12, 2);
    TransformSpec spec;
    spec.resize_to = 14;
    spec.crop_size = 10;
    std::vector<std::size_t> idx{0, 3, 5};
    EXPECT_EQ(transform_images(ds, idx, spec, Phase::Cluster), transform_images(ds, idx, spec, Phase::Cluster));
}

TEST(Transforms, TrainPhaseFlipsAreSeeded) {
    const ImageDataset ds = fixture::banded_dataset(64, 2, 8, 3);
    TransformSpec spec;
    spec.resize_to = spec.crop_size = 8;
    BatchStream a(ds, spec, Phase::Train, 64, 5), b(ds, spec, Phase::Train, 64, 5), c(ds, spec, Phase::Train, 64, 6);
    const auto ba = a.next(), bb = b.next(), bc = c.next();
    EXPECT_EQ(ba->images, bb->images);
    EXPECT_EQ(ba->indices, bb->indices);
    EXPECT_NE(ba->indices, bc->indices);
    EXPECT_FALSE(a.next().has_value());
}

TEST(Transforms, ClusterStreamVisitsInOrder) {
    const ImageDataset ds = fixture::banded_dataset(10, 2, 8, 3);
    TransformSpec spec;
    spec.resize_to = spec.crop_size = 8;
    BatchStream s(ds, spec, Phase::Cluster, 4, 0);
    EXPECT_EQ(s.batch_count(), 3u);
    std::vector<std::size_t> seen;
    while (auto b = s.next()) seen.insert(seen.end(), b->indices.begin(), b->indices.end());
    std::vector<std::size_t> expected(10);
    std::iota(expected.begin(), expected.end(), std::size_t{0});
    EXPECT_EQ(seen, expected);
}

TEST(Transforms, RejectsCropLargerThanResize) {
    TransformSpec spec;
    spec.resize_to = 28;
    spec.crop_size = 32;
    EXPECT_THROW(spec.validate(1), ConfigError);
    spec.crop_size = 28;
    spec.normalize_std = {0.0};
    EXPECT_THROW(spec.validate(1), ConfigError);
}

TEST(Sobel, ConstantImageGivesZeroGradients) {
    const Tensor out = sobel(Tensor({2, 3, 7, 5}, 0.8f));
    EXPECT_EQ(out.shape(), (Shape{2, 2, 7, 5}));
    for (float v : out.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Sobel, VerticalStepEdge) {
    Tensor x({1, 1, 6, 8});
    for (std::size_t y = 0; y < 6; ++y) {
        for (std::size_t c = 4; c < 8; ++c) x.at(0, 0, y, c) = 1.0f;
    }
    const Tensor out = sobel(x);
    for (std::size_t y = 0; y < 6; ++y) {
        for (std::size_t c = 0; c < 8; ++c) {
            const float expected_dx = (c == 3 || c == 4) ? 4.0f : 0.0f;
            EXPECT_EQ(out.at(0, 0, y, c), expected_dx) << y << "," << c;
            EXPECT_EQ(out.at(0, 1, y, c), 0.0f);
        }
    }
}

TEST(Sobel, TransformEmitsTwoChannels) {
    const ImageDataset ds = fixture::banded_dataset(2, 2, 8, 4);
    TransformSpec spec;
    spec.resize_to = spec.crop_size = 8;
    spec.sobel = true;
    EXPECT_EQ(spec.output_channels(1), 2u);
    const std::vector<std::size_t> idx{0, 1};
    EXPECT_EQ(transform_images(ds, idx, spec, Phase::Cluster).shape(), (Shape{2, 2, 8, 8}));
}
