#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcl/rng.hpp"
#include "dcl/tensor.hpp"

namespace dcl {

enum class Split { Train, Test };

/// N images of C x H x W unsigned bytes, optionally labelled.
struct ImageDataset {
    std::size_t count = 0;
    std::size_t channels = 1;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;  // NCHW
    std::optional<std::vector<std::int32_t>> labels;
    std::size_t class_count = 0;
    Split split = Split::Train;

    std::size_t image_size() const { return channels * height * width; }
    std::span<const std::uint8_t> image(std::size_t i) const {
        return std::span<const std::uint8_t>(pixels).subspan(i * image_size(), image_size());
    }
    /// Throws DataError if sizes or labels are inconsistent.
    void validate() const;
};

/// Raw contents of an IDX file: unsigned-byte payload with its dimensions.
struct IdxArray {
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> data;
};

/// Parses an IDX file of unsigned bytes (type code 0x08) with 1 or 3 dims.
IdxArray read_idx(const std::filesystem::path& path);
IdxArray parse_idx(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");

/// Images from an idx3 file plus optional labels from an idx1 file.
ImageDataset load_idx(const std::filesystem::path& images, const std::optional<std::filesystem::path>& labels,
                      std::size_t class_count = 10, Split split = Split::Train);

/// Headerless NCHW byte file plus optional one-byte-per-sample label file.
ImageDataset load_raw_nchw(const std::filesystem::path& images, const std::optional<std::filesystem::path>& labels,
                           std::size_t channels, std::size_t height, std::size_t width, std::size_t class_count,
                           Split split = Split::Train);

/// Images at `indices`, in that order.
ImageDataset select(const ImageDataset& ds, std::span<const std::size_t> indices);

/// The first `max_samples` images of a seeded shuffle. max_samples == 0 or
/// >= count returns the dataset unchanged.
ImageDataset subset(const ImageDataset& ds, std::size_t max_samples, std::uint64_t seed);

// ---------------------------------------------------------------------------

enum class Phase { Cluster, Train };

struct TransformSpec {
    std::vector<double> normalize_mean{0.5};
    std::vector<double> normalize_std{0.5};
    std::size_t resize_to = 28;
    std::size_t crop_size = 28;
    bool horizontal_flip = true;  // Train phase only
    bool sobel = false;

    /// Throws ConfigError for crop > resize, non-positive std, or a channel
    /// count the mean/std vectors do not cover.
    void validate(std::size_t channels) const;
    /// Channel count of transformed images.
    std::size_t output_channels(std::size_t input_channels) const { return sobel ? 2 : input_channels; }
};

/// Transforms the images at `indices` into an NCHW float batch: scale to
/// [0,1], per-channel normalize, bilinear resize, center crop, then (Train
/// phase, if enabled) horizontal flips drawn from `flip_rng`, then Sobel.
Tensor transform_images(const ImageDataset& ds, std::span<const std::size_t> indices, const TransformSpec& spec,
                        Phase phase, Rng* flip_rng = nullptr);

/// Bilinear resize with half-pixel centers; identity when the size already matches.
Tensor resize_bilinear(const Tensor& batch, std::size_t size);
Tensor center_crop(const Tensor& batch, std::size_t size);
void flip_horizontal(Tensor& batch, std::size_t index);

/// 1- or 3-channel batch to 2 channels (d/dx, d/dy). Color input is first
/// reduced to luminance (0.299, 0.587, 0.114); borders replicate edge pixels.
Tensor sobel(const Tensor& batch);

struct Batch {
    Tensor images;
    std::vector<std::size_t> indices;
};

/// Ordered batches over a dataset. Cluster phase visits samples in dataset
/// order with no randomness; Train phase shuffles the order and draws flips,
/// both from `seed`.
class BatchStream {
public:
    BatchStream(const ImageDataset& ds, TransformSpec spec, Phase phase, std::size_t batch_size, std::uint64_t seed);

    std::optional<Batch> next();
    std::size_t batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

private:
    const ImageDataset& ds_;
    TransformSpec spec_;
    Phase phase_;
    std::size_t batch_size_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    Rng flip_rng_;
};

}  // namespace dcl
