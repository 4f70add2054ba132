#include "dcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace dcl {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

std::vector<std::int32_t> labels_from_bytes(std::span<const std::uint8_t> bytes, std::size_t class_count,
                                            const std::string& origin) {
    std::vector<std::int32_t> labels(bytes.begin(), bytes.end());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (static_cast<std::size_t>(labels[i]) >= class_count) {
            throw DataError(origin + ": label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                            " exceeds class count " + std::to_string(class_count));
        }
    }
    return labels;
}

}  // namespace

void ImageDataset::validate() const {
    if (pixels.size() != count * image_size()) throw DataError("pixel buffer does not match image count and shape");
    if (labels) {
        if (labels->size() != count) {
            throw DataError("label count " + std::to_string(labels->size()) + " does not match image count " +
                            std::to_string(count));
        }
        for (auto l : *labels) {
            if (l < 0 || static_cast<std::size_t>(l) >= class_count) throw DataError("label out of range");
        }
    }
}

IdxArray parse_idx(std::span<const std::uint8_t> bytes, const std::string& origin) {
    if (bytes.size() < 4) throw DataError(origin + ": truncated IDX header");
    if (bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 || (bytes[3] != 0x01 && bytes[3] != 0x03)) {
        throw DataError(origin + ": bad IDX magic (expected 00 00 08 01 or 00 00 08 03)");
    }
    const std::size_t ndims = bytes[3];
    const std::size_t header = 4 + 4 * ndims;
    if (bytes.size() < header) throw DataError(origin + ": truncated IDX header");
    IdxArray arr;
    std::size_t total = 1;
    for (std::size_t i = 0; i < ndims; ++i) {
        arr.dims.push_back(read_be32(bytes.data() + 4 + 4 * i));
        total *= arr.dims.back();
    }
    if (bytes.size() - header < total) {
        throw DataError(origin + ": truncated IDX payload (" + std::to_string(bytes.size() - header) + " of " +
                        std::to_string(total) + " bytes)");
    }
    arr.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header),
                    bytes.begin() + static_cast<std::ptrdiff_t>(header + total));
    return arr;
}

IdxArray read_idx(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return parse_idx(bytes, path.string());
}

ImageDataset load_idx(const std::filesystem::path& images, const std::optional<std::filesystem::path>& labels,
                      std::size_t class_count, Split split) {
    const IdxArray img = read_idx(images);
    if (img.dims.size() != 3) throw DataError(images.string() + ": image file must have 3 dimensions");
    ImageDataset ds;
    ds.count = img.dims[0];
    ds.channels = 1;
    ds.height = img.dims[1];
    ds.width = img.dims[2];
    ds.pixels = img.data;
    ds.class_count = class_count;
    ds.split = split;
    if (labels) {
        const IdxArray lab = read_idx(*labels);
        if (lab.dims.size() != 1) throw DataError(labels->string() + ": label file must have 1 dimension");
        if (lab.dims[0] != ds.count) {
            throw DataError("count mismatch: " + std::to_string(ds.count) + " images but " +
                            std::to_string(lab.dims[0]) + " labels");
        }
        ds.labels = labels_from_bytes(lab.data, class_count, labels->string());
    }
    ds.validate();
    return ds;
}

ImageDataset load_raw_nchw(const std::filesystem::path& images, const std::optional<std::filesystem::path>& labels,
                           std::size_t channels, std::size_t height, std::size_t width, std::size_t class_count,
                           Split split) {
    ImageDataset ds;
    ds.channels = channels;
    ds.height = height;
    ds.width = width;
    ds.class_count = class_count;
    ds.split = split;
    ds.pixels = read_file(images);
    if (ds.image_size() == 0 || ds.pixels.size() % ds.image_size() != 0) {
        throw DataError(images.string() + ": size is not a multiple of the image size");
    }
    ds.count = ds.pixels.size() / ds.image_size();
    if (labels) {
        const auto bytes = read_file(*labels);
        if (bytes.size() != ds.count) {
            throw DataError("count mismatch: " + std::to_string(ds.count) + " images but " +
                            std::to_string(bytes.size()) + " labels");
        }
        ds.labels = labels_from_bytes(bytes, class_count, labels->string());
    }
    ds.validate();
    return ds;
}

ImageDataset select(const ImageDataset& ds, std::span<const std::size_t> indices) {
    ImageDataset out = ds;
    out.count = indices.size();
    out.pixels.clear();
    out.pixels.reserve(indices.size() * ds.image_size());
    if (ds.labels) out.labels->clear();
    for (auto i : indices) {
        if (i >= ds.count) throw DataError("sample index out of range");
        const auto img = ds.image(i);
        out.pixels.insert(out.pixels.end(), img.begin(), img.end());
        if (ds.labels) out.labels->push_back((*ds.labels)[i]);
    }
    return out;
}

ImageDataset subset(const ImageDataset& ds, std::size_t max_samples, std::uint64_t seed) {
    if (max_samples == 0 || max_samples >= ds.count) return ds;
    std::vector<std::size_t> order(ds.count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    order.resize(max_samples);
    return select(ds, order);
}

// ---------------------------------------------------------------------------

void TransformSpec::validate(std::size_t channels) const {
    if (crop_size == 0 || resize_to == 0) throw ConfigError("crop_size", "sizes must be positive");
    if (crop_size > resize_to) {
        throw ConfigError("crop_size", "crop " + std::to_string(crop_size) + " larger than resized image " +
                                           std::to_string(resize_to));
    }
    if (normalize_mean.size() != channels && normalize_mean.size() != 1) {
        throw ConfigError("normalize_mean", "needs 1 or " + std::to_string(channels) + " entries");
    }
    if (normalize_std.size() != channels && normalize_std.size() != 1) {
        throw ConfigError("normalize_std", "needs 1 or " + std::to_string(channels) + " entries");
    }
    for (double s : normalize_std) {
        if (!(s > 0.0)) throw ConfigError("normalize_std", "std components must be > 0");
    }
    if (sobel && channels != 1 && channels != 3) throw ConfigError("sobel", "sobel needs 1 or 3 input channels");
}

Tensor resize_bilinear(const Tensor& batch, std::size_t size) {
    const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    if (h == size && w == size) return batch;
    Tensor out({n, c, size, size});
    auto axis = [](std::size_t src_len, std::size_t dst_len, std::size_t i, std::size_t& i0, std::size_t& i1,
                   double& frac) {
        const double scale = static_cast<double>(src_len) / static_cast<double>(dst_len);
        double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(src_len - 1));
        i0 = static_cast<std::size_t>(std::floor(s));
        i1 = std::min(i0 + 1, src_len - 1);
        frac = s - static_cast<double>(i0);
    };
    for (std::size_t p = 0; p < n * c; ++p) {
        const float* src = batch.data() + p * h * w;
        float* dst = out.data() + p * size * size;
        for (std::size_t y = 0; y < size; ++y) {
            std::size_t y0, y1;
            double fy;
            axis(h, size, y, y0, y1, fy);
            for (std::size_t x = 0; x < size; ++x) {
                std::size_t x0, x1;
                double fx;
                axis(w, size, x, x0, x1, fx);
                const double top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                const double bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[y * size + x] = static_cast<float>(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    return out;
}

Tensor center_crop(const Tensor& batch, std::size_t size) {
    const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    if (size > h || size > w) throw ConfigError("crop_size", "crop larger than image");
    if (size == h && size == w) return batch;
    const std::size_t top = (h - size) / 2, left = (w - size) / 2;
    Tensor out({n, c, size, size});
    for (std::size_t p = 0; p < n * c; ++p) {
        for (std::size_t y = 0; y < size; ++y) {
            const float* src = batch.data() + (p * h + top + y) * w + left;
            std::copy(src, src + size, out.data() + (p * size + y) * size);
        }
    }
    return out;
}

void flip_horizontal(Tensor& batch, std::size_t index) {
    const std::size_t c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
            float* row = batch.data() + ((index * c + ch) * h + y) * w;
            std::reverse(row, row + w);
        }
    }
}

Tensor sobel(const Tensor& batch) {
    if (batch.rank() != 4 || (batch.dim(1) != 1 && batch.dim(1) != 3)) {
        throw ShapeError("sobel needs a [N,1,H,W] or [N,3,H,W] batch, got " + shape_str(batch.shape()));
    }
    const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    std::vector<float> gray(h * w);
    Tensor out({n, 2, h, w});
    auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
        y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(h) - 1);
        x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(w) - 1);
        return gray[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
    };
    for (std::size_t s = 0; s < n; ++s) {
        if (c == 1) {
            std::copy_n(batch.data() + s * h * w, h * w, gray.begin());
        } else {
            const float* r = batch.data() + (s * 3 + 0) * h * w;
            const float* g = batch.data() + (s * 3 + 1) * h * w;
            const float* b = batch.data() + (s * 3 + 2) * h * w;
            for (std::size_t i = 0; i < h * w; ++i) gray[i] = 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i];
        }
        float* dx = out.data() + (s * 2 + 0) * h * w;
        float* dy = out.data() + (s * 2 + 1) * h * w;
        for (std::ptrdiff_t y = 0; y < static_cast<std::ptrdiff_t>(h); ++y) {
            for (std::ptrdiff_t x = 0; x < static_cast<std::ptrdiff_t>(w); ++x) {
                const float gx = (at(y - 1, x + 1) + 2.0f * at(y, x + 1) + at(y + 1, x + 1)) -
                                 (at(y - 1, x - 1) + 2.0f * at(y, x - 1) + at(y + 1, x - 1));
                const float gy = (at(y + 1, x - 1) + 2.0f * at(y + 1, x) + at(y + 1, x + 1)) -
                                 (at(y - 1, x - 1) + 2.0f * at(y - 1, x) + at(y - 1, x + 1));
                const std::size_t o = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
                dx[o] = gx;
                dy[o] = gy;
            }
        }
    }
    return out;
}

Tensor transform_images(const ImageDataset& ds, std::span<const std::size_t> indices, const TransformSpec& spec,
                        Phase phase, Rng* flip_rng) {
    spec.validate(ds.channels);
    const std::size_t c = ds.channels, plane = ds.height * ds.width;
    Tensor batch({indices.size(), c, ds.height, ds.width});
    for (std::size_t s = 0; s < indices.size(); ++s) {
        if (indices[s] >= ds.count) throw DataError("sample index out of range");
        const auto img = ds.image(indices[s]);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double mean = spec.normalize_mean.size() == 1 ? spec.normalize_mean[0] : spec.normalize_mean[ch];
            const double sd = spec.normalize_std.size() == 1 ? spec.normalize_std[0] : spec.normalize_std[ch];
            float* dst = batch.data() + (s * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                dst[i] = static_cast<float>((img[ch * plane + i] / 255.0 - mean) / sd);
            }
        }
    }
    batch = center_crop(resize_bilinear(batch, spec.resize_to), spec.crop_size);
    if (phase == Phase::Train && spec.horizontal_flip) {
        if (!flip_rng) throw Error("train-phase transforms need a flip generator");
        for (std::size_t s = 0; s < indices.size(); ++s) {
            if (flip_rng->coin()) flip_horizontal(batch, s);
        }
    }
    if (spec.sobel) batch = sobel(batch);
    return batch;
}

BatchStream::BatchStream(const ImageDataset& ds, TransformSpec spec, Phase phase, std::size_t batch_size,
                         std::uint64_t seed)
    : ds_(ds), spec_(std::move(spec)), phase_(phase), batch_size_(batch_size), order_(ds.count),
      flip_rng_(derive_seed(seed, {1})) {
    if (batch_size_ == 0) throw ConfigError("batch_size", "must be positive");
    spec_.validate(ds.channels);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (phase_ == Phase::Train) {
        Rng rng(derive_seed(seed, {0}));
        rng.shuffle(order_);
    }
}

std::optional<Batch> BatchStream::next() {
    if (pos_ >= order_.size()) return std::nullopt;
    const std::size_t end = std::min(pos_ + batch_size_, order_.size());
    Batch b;
    b.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(pos_), order_.begin() + static_cast<std::ptrdiff_t>(end));
    b.images = transform_images(ds_, b.indices, spec_, phase_, &flip_rng_);
    pos_ = end;
    return b;
}

}  // namespace dcl
