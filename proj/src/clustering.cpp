#include "dcl/clustering.hpp"

#include <Eigen/Core>

#include <limits>

#include "dcl/binary_io.hpp"
#include "dcl/rng.hpp"

namespace dcl {

namespace {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void assign_nearest(const RowMatrixXd& x, const RowMatrixXd& c, std::vector<std::int32_t>& assign) {
    const Eigen::Index n = x.rows(), k = c.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd d = (c.rowwise() - x.row(i)).rowwise().squaredNorm();
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < k; ++j) {
            if (d(j) < d(best)) best = j;
        }
        assign[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(best);
    }
}

double cost(const RowMatrixXd& x, const RowMatrixXd& c, const std::vector<std::int32_t>& assign) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) total += (x.row(i) - c.row(assign[static_cast<std::size_t>(i)])).squaredNorm();
    return total;
}

void update_means(const RowMatrixXd& x, const std::vector<std::int32_t>& assign, RowMatrixXd& c) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(c.rows()), 0);
    c.setZero();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto a = assign[static_cast<std::size_t>(i)];
        c.row(a) += x.row(i);
        ++counts[static_cast<std::size_t>(a)];
    }
    for (Eigen::Index j = 0; j < c.rows(); ++j) {
        if (counts[static_cast<std::size_t>(j)] > 0) c.row(j) /= static_cast<double>(counts[static_cast<std::size_t>(j)]);
    }
}

/// Fills every empty cluster by moving in the point of the currently largest
/// cluster that is farthest from that cluster's centroid.
void repair_empty(const RowMatrixXd& x, std::vector<std::int32_t>& assign, RowMatrixXd& c) {
    const std::size_t k = static_cast<std::size_t>(c.rows());
    std::vector<std::size_t> counts(k, 0);
    for (auto a : assign) ++counts[static_cast<std::size_t>(a)];
    for (std::size_t e = 0; e < k; ++e) {
        if (counts[e] != 0) continue;
        std::size_t largest = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (counts[j] > counts[largest]) largest = j;
        }
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < assign.size(); ++i) {
            if (static_cast<std::size_t>(assign[i]) != largest) continue;
            const double d = (x.row(static_cast<Eigen::Index>(i)) - c.row(static_cast<Eigen::Index>(largest))).squaredNorm();
            if (d > far_d) {
                far_d = d;
                far = i;
            }
        }
        assign[far] = static_cast<std::int32_t>(e);
        c.row(static_cast<Eigen::Index>(e)) = x.row(static_cast<Eigen::Index>(far));
        --counts[largest];
        ++counts[e];
    }
}

RowMatrixXd kmeanspp(const RowMatrixXd& x, std::size_t k, Rng& rng) {
    const std::size_t n = static_cast<std::size_t>(x.rows());
    RowMatrixXd c(static_cast<Eigen::Index>(k), x.cols());
    c.row(0) = x.row(static_cast<Eigen::Index>(rng.below(n)));
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = (x.row(static_cast<Eigen::Index>(i)) - c.row(0)).squaredNorm();
    for (std::size_t j = 1; j < k; ++j) {
        double total = 0.0;
        for (double v : d2) total += v;
        std::size_t pick = n - 1;
        if (total > 0.0) {
            const double r = rng.uniform() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc > r && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.below(n);
        }
        c.row(static_cast<Eigen::Index>(j)) = x.row(static_cast<Eigen::Index>(pick));
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], (x.row(static_cast<Eigen::Index>(i)) - c.row(static_cast<Eigen::Index>(j))).squaredNorm());
        }
    }
    return c;
}

}  // namespace

KMeansResult kmeans(const FeatureMatrix& features, std::size_t k, std::uint64_t seed, const KMeansOptions& options) {
    features.validate();
    const std::size_t n = features.rows, dims = features.dims;
    if (k < 2) throw ConfigError("num_clusters", "k must be at least 2");
    if (k > n) {
        throw ConfigError("num_clusters", "k = " + std::to_string(k) + " exceeds the number of samples " + std::to_string(n));
    }
    if (options.max_iter == 0) throw ConfigError("kmeans_max_iter", "must be positive");

    RowMatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dims));
    for (std::size_t i = 0; i < n * dims; ++i) x.data()[i] = features.data[i];

    Rng rng(seed);
    RowMatrixXd c = kmeanspp(x, k, rng);
    std::vector<std::int32_t> assign(n);
    assign_nearest(x, c, assign);
    repair_empty(x, assign, c);
    update_means(x, assign, c);

    KMeansResult r;
    r.k = k;
    r.dims = dims;
    r.inertia = cost(x, c, assign);
    r.inertia_history.push_back(r.inertia);

    std::vector<std::int32_t> next(n);
    for (std::size_t it = 1; it <= options.max_iter; ++it) {
        assign_nearest(x, c, next);
        repair_empty(x, next, c);
        update_means(x, next, c);
        const double prev = r.inertia;
        r.inertia = cost(x, c, next);
        r.inertia_history.push_back(r.inertia);
        r.iterations_run = it;
        const bool changed = next != assign;
        assign.swap(next);
        if (!changed || r.inertia == 0.0) break;
        if (prev > 0.0 && (prev - r.inertia) / prev < options.tol) break;
    }

    r.assignments = std::move(assign);
    r.centroids.assign(c.data(), c.data() + c.size());
    return r;
}

std::vector<std::int32_t> pseudo_labels(const KMeansResult& result) { return result.assignments; }

void write_kmeans(const std::filesystem::path& path, const KMeansResult& result) {
    BinaryWriter w(path);
    w.bytes("KMNS", 4);
    w.u32(static_cast<std::uint32_t>(result.k));
    w.u32(static_cast<std::uint32_t>(result.dims));
    for (double v : result.centroids) w.f32(static_cast<float>(v));
    w.u32(static_cast<std::uint32_t>(result.assignments.size()));
    for (auto a : result.assignments) w.u32(static_cast<std::uint32_t>(a));
    w.close();
}

}  // namespace dcl
