#include "dcl/features.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "dcl/binary_io.hpp"

namespace dcl {

void FeatureMatrix::validate() const {
    if (data.size() != rows * dims) throw ShapeError("feature matrix data does not match rows x dims");
    for (float v : data) {
        if (!std::isfinite(v)) throw NumericalError("non-finite feature value");
    }
}

FeatureMatrix extract_features(Network& net, const ImageDataset& ds, const TransformSpec& spec,
                               std::size_t batch_size, const std::string& layer) {
    std::size_t block = net.block_count() - 1;
    if (!layer.empty()) {
        auto idx = net.block_index(layer);
        if (!idx) throw ConfigError("layer", "no block named '" + layer + "' in network");
        block = *idx;
    }
    const Mode saved = net.mode();
    net.set_mode(Mode::Eval);

    FeatureMatrix f;
    f.rows = ds.count;
    f.dims = net.block_dim(block);
    f.source_layer = layer.empty() ? "conv" + std::to_string(net.block_count()) : layer;
    f.data.reserve(f.rows * f.dims);
    BatchStream stream(ds, spec, Phase::Cluster, batch_size, 0);
    try {
        while (auto b = stream.next()) {
            const Tensor out = net.forward_to(b->images, block);
            f.data.insert(f.data.end(), out.values().begin(), out.values().end());
        }
    } catch (...) {
        net.set_mode(saved);
        throw;
    }
    net.set_mode(saved);
    f.validate();
    return f;
}

PcaModel fit_pca(const FeatureMatrix& features, std::size_t d, double epsilon) {
    features.validate();
    const std::size_t n = features.rows, dim = features.dims;
    if (d == 0 || d > std::min(n, dim)) {
        throw ConfigError("pca_components", "requested " + std::to_string(d) + " components but min(N, D) = " +
                                                std::to_string(std::min(n, dim)));
    }
    if (n < 2) throw ConfigError("pca_components", "PCA needs at least 2 samples");

    Eigen::MatrixXd x(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < dim; ++j) x(i, j) = features.data[i * dim + j];
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
    cov.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose(), 1.0 / static_cast<double>(n - 1));
    cov = cov.selfadjointView<Eigen::Lower>();
    if (!(cov.trace() > 0.0)) throw NumericalError("degenerate features: every dimension is constant");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw NumericalError("covariance eigendecomposition failed");
    const Eigen::VectorXd& evals = solver.eigenvalues();  // ascending
    const Eigen::MatrixXd& evecs = solver.eigenvectors();

    PcaModel pca;
    pca.input_dim = dim;
    pca.components = d;
    pca.epsilon = epsilon;
    pca.mean.assign(mean.data(), mean.data() + dim);
    pca.basis.assign(dim * d, 0.0);
    pca.eigenvalues.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        const Eigen::Index src = static_cast<Eigen::Index>(dim - 1 - j);
        pca.eigenvalues[j] = std::max(0.0, evals(src));
        // Sign convention: the largest-magnitude entry of each component is positive.
        Eigen::Index arg = 0;
        evecs.col(src).cwiseAbs().maxCoeff(&arg);
        const double sign = evecs(arg, src) < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < dim; ++i) pca.basis[i * d + j] = sign * evecs(static_cast<Eigen::Index>(i), src);
    }
    return pca;
}

namespace {

FeatureMatrix project_impl(const FeatureMatrix& features, const PcaModel& pca, bool whiten) {
    if (features.dims != pca.input_dim) throw ShapeError("feature dimension does not match PCA model");
    const std::size_t d = pca.components, dim = pca.input_dim;
    FeatureMatrix out;
    out.rows = features.rows;
    out.dims = d;
    out.source_layer = features.source_layer;
    out.data.resize(out.rows * d);
    std::vector<double> scale(d, 1.0);
    if (whiten) {
        for (std::size_t j = 0; j < d; ++j) scale[j] = 1.0 / std::sqrt(pca.eigenvalues[j] + pca.epsilon);
    }
    std::vector<double> centered(dim), acc(d);
    for (std::size_t r = 0; r < features.rows; ++r) {
        const auto row = features.row(r);
        for (std::size_t i = 0; i < dim; ++i) centered[i] = row[i] - pca.mean[i];
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t i = 0; i < dim; ++i) {
            const double c = centered[i];
            const double* b = pca.basis.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) acc[j] += c * b[j];
        }
        for (std::size_t j = 0; j < d; ++j) out.data[r * d + j] = static_cast<float>(acc[j] * scale[j]);
    }
    return out;
}

}  // namespace

FeatureMatrix pca_project(const FeatureMatrix& features, const PcaModel& pca) {
    return project_impl(features, pca, false);
}

FeatureMatrix pca_whiten(const FeatureMatrix& features, const PcaModel& pca) {
    return project_impl(features, pca, true);
}

FeatureMatrix l2_normalize_rows(const FeatureMatrix& features) {
    FeatureMatrix out = features;
    for (std::size_t r = 0; r < out.rows; ++r) {
        auto row = out.row(r);
        double sq = 0.0;
        for (float v : row) sq += static_cast<double>(v) * v;
        if (!(sq > 0.0)) throw NumericalError("cannot L2-normalize all-zero feature row " + std::to_string(r));
        const double inv = 1.0 / std::sqrt(sq);
        for (float& v : row) v = static_cast<float>(v * inv);
    }
    return out;
}

FeatureMatrix postprocess(const FeatureMatrix& features, const std::optional<PcaModel>& pca) {
    features.validate();
    FeatureMatrix out = pca ? pca_whiten(features, *pca) : features;
    out = l2_normalize_rows(out);
    out.validate();
    return out;
}

void write_fmat(const std::filesystem::path& path, const FeatureMatrix& features) {
    BinaryWriter w(path);
    w.bytes("FMAT", 4);
    w.u32(static_cast<std::uint32_t>(features.rows));
    w.u32(static_cast<std::uint32_t>(features.dims));
    for (float v : features.data) w.f32(v);
    w.close();
}

FeatureMatrix read_fmat(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("FMAT");
    FeatureMatrix f;
    f.rows = r.u32();
    f.dims = r.u32();
    f.data.resize(f.rows * f.dims);
    for (auto& v : f.data) v = r.f32();
    return f;
}

void write_features_csv(const std::filesystem::path& path, const FeatureMatrix& features,
                        const std::optional<std::vector<std::int32_t>>& labels) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << std::setprecision(9);
    if (labels) out << "label,";
    for (std::size_t j = 0; j < features.dims; ++j) out << (j ? "," : "") << "f" << j;
    out << '\n';
    for (std::size_t r = 0; r < features.rows; ++r) {
        if (labels) out << (*labels).at(r) << ',';
        const auto row = features.row(r);
        for (std::size_t j = 0; j < features.dims; ++j) out << (j ? "," : "") << row[j];
        out << '\n';
    }
}

}  // namespace dcl
