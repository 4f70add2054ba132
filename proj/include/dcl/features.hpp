#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcl/data.hpp"
#include "dcl/nn.hpp"

namespace dcl {

/// N x D row-major feature rows, one per dataset sample.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t dims = 0;
    std::vector<float> data;
    std::string source_layer;

    std::span<const float> row(std::size_t i) const { return std::span<const float>(data).subspan(i * dims, dims); }
    std::span<float> row(std::size_t i) { return std::span<float>(data).subspan(i * dims, dims); }
    /// Throws NumericalError on NaN/Inf, ShapeError on a size mismatch.
    void validate() const;
};

struct PcaModel {
    std::size_t input_dim = 0;
    std::size_t components = 0;
    std::vector<double> mean;         // input_dim
    std::vector<double> basis;        // input_dim x components, column j = j-th component
    std::vector<double> eigenvalues;  // components, descending, clamped at 0
    double epsilon = 1e-5;
};

/// Row i is the Features output of sample i under Cluster-phase transforms.
/// Runs in Eval mode (restoring the caller's mode). `layer` selects an
/// intermediate block by name; empty means the last block.
FeatureMatrix extract_features(Network& net, const ImageDataset& ds, const TransformSpec& spec,
                               std::size_t batch_size, const std::string& layer = "");

/// Top-`d` principal components of the mean-centered sample covariance
/// (divisor N-1). Throws ConfigError if d is 0 or exceeds min(N, D) and
/// NumericalError when every feature is constant.
PcaModel fit_pca(const FeatureMatrix& features, std::size_t d, double epsilon = 1e-5);

/// Centered projection onto the components, without whitening.
FeatureMatrix pca_project(const FeatureMatrix& features, const PcaModel& pca);
/// Projection with coordinate j scaled by 1/sqrt(eigenvalue_j + epsilon).
FeatureMatrix pca_whiten(const FeatureMatrix& features, const PcaModel& pca);
/// Throws NumericalError on an all-zero row.
FeatureMatrix l2_normalize_rows(const FeatureMatrix& features);

/// Whitened PCA projection (when `pca` is given) followed by row L2 normalization.
FeatureMatrix postprocess(const FeatureMatrix& features, const std::optional<PcaModel>& pca);

/// Binary export: "FMAT", u32 N, u32 D (little-endian), then N*D little-endian f32.
void write_fmat(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_fmat(const std::filesystem::path& path);
/// One row per sample; with labels, a leading "label" column.
void write_features_csv(const std::filesystem::path& path, const FeatureMatrix& features,
                        const std::optional<std::vector<std::int32_t>>& labels = std::nullopt);

}  // namespace dcl
