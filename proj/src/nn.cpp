#include "dcl/nn.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <limits>

#include "dcl/rng.hpp"

namespace dcl {

namespace {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

constexpr std::uint64_t kHeadStream = 0x4845414400000000ULL;

template <class T>
Parameter<T> make_param(std::string name, Shape shape) {
    BasicTensor<T> value(shape);
    BasicTensor<T> grad(std::move(shape));
    return Parameter<T>{std::move(name), std::move(value), std::move(grad)};
}

template <class T>
void kaiming_uniform(BasicTensor<T>& w, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <class T>
void require_finite(const BasicTensor<T>& t, const char* what) {
    if (!t.all_finite()) throw NumericalError(std::string("non-finite values in ") + what);
}

}  // namespace

std::string to_string(Architecture a) {
    return a == Architecture::LeNet5Variant ? "lenet5" : "mini_alexnet";
}

Architecture architecture_from_string(const std::string& s) {
    if (s == "lenet5") return Architecture::LeNet5Variant;
    if (s == "mini_alexnet") return Architecture::MiniAlexNet;
    throw ConfigError("architecture", "unknown architecture '" + s + "' (expected lenet5 or mini_alexnet)");
}

NetworkGraph make_graph(const NetworkConfig& config) {
    if (config.input_channels != 1 && config.input_channels != 3) {
        throw ConfigError("input_channels", "must be 1 or 3");
    }
    if (config.num_classes < 2) throw ConfigError("num_classes", "head width must be at least 2");

    NetworkGraph g;
    g.input_channels = config.use_sobel ? 2 : config.input_channels;
    g.input_height = g.input_width = config.input_size;
    g.head_width = config.num_classes;

    std::vector<std::size_t> filters = config.filters;
    if (config.architecture == Architecture::LeNet5Variant) {
        if (filters.empty()) filters = {6, 16};
        if (filters.size() != 2) throw ConfigError("filters", "lenet5 takes exactly 2 filter counts");
        for (std::size_t i = 0; i < 2; ++i) {
            g.blocks.push_back({"conv" + std::to_string(i + 1), filters[i], 5, 0, config.use_batchnorm, true});
        }
    } else {
        if (filters.empty()) filters = {48, 126, 192, 192, 128};
        if (filters.size() != 5) throw ConfigError("filters", "mini_alexnet takes exactly 5 filter counts");
        for (std::size_t i = 0; i < 5; ++i) {
            const bool pool = i == 0 || i == 1 || i == 4;
            g.blocks.push_back({"conv" + std::to_string(i + 1), filters[i], 3, 1, config.use_batchnorm, pool});
        }
    }
    for (auto f : filters) {
        if (f == 0) throw ConfigError("filters", "filter counts must be positive");
    }

    // Walk the geometry so bad input sizes fail at configuration time.
    std::size_t side = config.input_size;
    for (const auto& b : g.blocks) {
        if (side + 2 * b.padding < b.kernel) {
            throw ConfigError("input_size", "input too small for block " + b.name);
        }
        side = side + 2 * b.padding - b.kernel + 1;
        if (b.pool) {
            if (side % 2 != 0) {
                throw ConfigError("input_size", "input size " + std::to_string(config.input_size) +
                                                    " is incompatible with the pooling schedule (odd size " +
                                                    std::to_string(side) + " before pooling in " + b.name + ")");
            }
            side /= 2;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Conv2d

template <class T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t padding)
    : weight(make_param<T>("weight", {out_channels, in_channels, kernel, kernel})),
      bias(make_param<T>("bias", {out_channels})),
      in_(in_channels),
      out_(out_channels),
      k_(kernel),
      pad_(padding) {}

template <class T>
BasicTensor<T> Conv2d<T>::forward(const BasicTensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != in_) {
        throw ShapeError("conv expects [N," + std::to_string(in_) + ",H,W], got " + shape_str(x.shape()));
    }
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    if (h + 2 * pad_ < k_ || w + 2 * pad_ < k_) throw ShapeError("conv input smaller than kernel");
    out_h_ = h + 2 * pad_ - k_ + 1;
    out_w_ = w + 2 * pad_ - k_ + 1;
    in_shape_ = x.shape();

    const std::size_t patch = in_ * k_ * k_;
    const std::size_t spatial = out_h_ * out_w_;
    cols_.assign(n * patch * spatial, T{});
    BasicTensor<T> y({n, out_, out_h_, out_w_});

    ConstMatrixMap<T> wmat(weight.value.data(), out_, patch);
    for (std::size_t s = 0; s < n; ++s) {
        T* col = cols_.data() + s * patch * spatial;
        for (std::size_t c = 0; c < in_; ++c) {
            for (std::size_t ki = 0; ki < k_; ++ki) {
                for (std::size_t kj = 0; kj < k_; ++kj) {
                    T* row = col + ((c * k_ + ki) * k_ + kj) * spatial;
                    for (std::size_t oh = 0; oh < out_h_; ++oh) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + ki) - static_cast<std::ptrdiff_t>(pad_);
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
                        const T* src = x.data() + ((s * in_ + c) * h + static_cast<std::size_t>(ih)) * w;
                        for (std::size_t ow = 0; ow < out_w_; ++ow) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow + kj) - static_cast<std::ptrdiff_t>(pad_);
                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
                            row[oh * out_w_ + ow] = src[iw];
                        }
                    }
                }
            }
        }
        ConstMatrixMap<T> cmat(col, patch, spatial);
        MatrixMap<T> ymat(y.data() + s * out_ * spatial, out_, spatial);
        ymat.noalias() = wmat * cmat;
        for (std::size_t o = 0; o < out_; ++o) ymat.row(o).array() += bias.value[o];
    }
    return y;
}

template <class T>
BasicTensor<T> Conv2d<T>::backward(const BasicTensor<T>& dy) {
    const std::size_t n = in_shape_.at(0), h = in_shape_[2], w = in_shape_[3];
    if (dy.shape() != Shape{n, out_, out_h_, out_w_}) {
        throw ShapeError("conv backward: gradient shape " + shape_str(dy.shape()) + " does not match output");
    }
    const std::size_t patch = in_ * k_ * k_;
    const std::size_t spatial = out_h_ * out_w_;

    BasicTensor<T> dx(in_shape_);
    std::vector<T> dcol(patch * spatial);
    ConstMatrixMap<T> wmat(weight.value.data(), out_, patch);
    MatrixMap<T> dw(weight.grad.data(), out_, patch);
    for (std::size_t s = 0; s < n; ++s) {
        ConstMatrixMap<T> dymat(dy.data() + s * out_ * spatial, out_, spatial);
        ConstMatrixMap<T> cmat(cols_.data() + s * patch * spatial, patch, spatial);
        dw.noalias() += dymat * cmat.transpose();
        for (std::size_t o = 0; o < out_; ++o) bias.grad[o] += dymat.row(o).sum();

        MatrixMap<T> dcmat(dcol.data(), patch, spatial);
        dcmat.noalias() = wmat.transpose() * dymat;
        for (std::size_t c = 0; c < in_; ++c) {
            for (std::size_t ki = 0; ki < k_; ++ki) {
                for (std::size_t kj = 0; kj < k_; ++kj) {
                    const T* row = dcol.data() + ((c * k_ + ki) * k_ + kj) * spatial;
                    for (std::size_t oh = 0; oh < out_h_; ++oh) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + ki) - static_cast<std::ptrdiff_t>(pad_);
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
                        T* dst = dx.data() + ((s * in_ + c) * h + static_cast<std::size_t>(ih)) * w;
                        for (std::size_t ow = 0; ow < out_w_; ++ow) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow + kj) - static_cast<std::ptrdiff_t>(pad_);
                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
                            dst[iw] += row[oh * out_w_ + ow];
                        }
                    }
                }
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <class T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels, double momentum, double eps)
    : gamma(make_param<T>("gamma", {channels})),
      beta(make_param<T>("beta", {channels})),
      running_mean({channels}, T{0}),
      running_var({channels}, T{1}),
      momentum_(momentum),
      eps_(eps) {
    gamma.value.fill(T{1});
}

template <class T>
BasicTensor<T> BatchNorm2d<T>::forward(const BasicTensor<T>& x, Mode mode) {
    const std::size_t channels = gamma.value.size();
    if (x.rank() != 4 || x.dim(1) != channels) throw ShapeError("batchnorm channel mismatch");
    const std::size_t n = x.dim(0), plane = x.dim(2) * x.dim(3);
    const std::size_t count = n * plane;

    last_mode_ = mode;
    xhat_ = BasicTensor<T>(x.shape());
    inv_std_.assign(channels, 0.0);
    BasicTensor<T> y(x.shape());

    for (std::size_t c = 0; c < channels; ++c) {
        double mean, var;
        if (mode == Mode::Train) {
            double sum = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                const T* p = x.data() + (s * channels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) sum += p[i];
            }
            mean = sum / static_cast<double>(count);
            double sq = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                const T* p = x.data() + (s * channels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mean;
                    sq += d * d;
                }
            }
            var = sq / static_cast<double>(count);
            const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
            running_mean[c] = static_cast<T>((1.0 - momentum_) * running_mean[c] + momentum_ * mean);
            running_var[c] = static_cast<T>((1.0 - momentum_) * running_var[c] + momentum_ * unbiased);
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[c] = inv;
        const double g = gamma.value[c], b = beta.value[c];
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = (s * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double xh = (x[off + i] - mean) * inv;
                xhat_[off + i] = static_cast<T>(xh);
                y[off + i] = static_cast<T>(g * xh + b);
            }
        }
    }
    return y;
}

template <class T>
BasicTensor<T> BatchNorm2d<T>::backward(const BasicTensor<T>& dy) {
    if (dy.shape() != xhat_.shape()) throw ShapeError("batchnorm backward shape mismatch");
    const std::size_t channels = gamma.value.size();
    const std::size_t n = dy.dim(0), plane = dy.dim(2) * dy.dim(3);
    const double count = static_cast<double>(n * plane);
    BasicTensor<T> dx(dy.shape());

    for (std::size_t c = 0; c < channels; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = (s * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += dy[off + i];
                sum_dy_xhat += static_cast<double>(dy[off + i]) * xhat_[off + i];
            }
        }
        gamma.grad[c] += static_cast<T>(sum_dy_xhat);
        beta.grad[c] += static_cast<T>(sum_dy);
        const double g = gamma.value[c];
        const double inv = inv_std_[c];
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = (s * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                if (last_mode_ == Mode::Train) {
                    dx[off + i] = static_cast<T>(g * inv / count *
                                                 (count * dy[off + i] - sum_dy - xhat_[off + i] * sum_dy_xhat));
                } else {
                    dx[off + i] = static_cast<T>(g * inv * dy[off + i]);
                }
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// MaxPool2x2

template <class T>
BasicTensor<T> MaxPool2x2<T>::forward(const BasicTensor<T>& x) {
    if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
        throw ShapeError("2x2 pooling needs even spatial dims, got " + shape_str(x.shape()));
    }
    in_shape_ = x.shape();
    const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / 2, ow = w / 2;
    BasicTensor<T> y({x.dim(0), x.dim(1), oh, ow});
    argmax_.assign(y.size(), 0);
    for (std::size_t p = 0; p < nc; ++p) {
        const std::size_t base = p * h * w;
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                std::size_t best = base + 2 * i * w + 2 * j;
                for (std::size_t di = 0; di < 2; ++di) {
                    for (std::size_t dj = 0; dj < 2; ++dj) {
                        const std::size_t idx = base + (2 * i + di) * w + 2 * j + dj;
                        if (x[idx] > x[best]) best = idx;
                    }
                }
                const std::size_t o = (p * oh + i) * ow + j;
                y[o] = x[best];
                argmax_[o] = best;
            }
        }
    }
    return y;
}

template <class T>
BasicTensor<T> MaxPool2x2<T>::backward(const BasicTensor<T>& dy) {
    if (dy.size() != argmax_.size()) throw ShapeError("pool backward shape mismatch");
    BasicTensor<T> dx(in_shape_);
    for (std::size_t o = 0; o < argmax_.size(); ++o) dx[argmax_[o]] += dy[o];
    return dx;
}

// ---------------------------------------------------------------------------
// Linear

template <class T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features)
    : weight(make_param<T>("weight", {out_features, in_features})),
      bias(make_param<T>("bias", {out_features})),
      in_(in_features),
      out_(out_features) {}

template <class T>
BasicTensor<T> Linear<T>::forward(const BasicTensor<T>& x) {
    if (x.rank() != 2 || x.dim(1) != in_) {
        throw ShapeError("linear expects [N," + std::to_string(in_) + "], got " + shape_str(x.shape()));
    }
    x_ = x;
    const std::size_t n = x.dim(0);
    BasicTensor<T> y({n, out_});
    ConstMatrixMap<T> xm(x.data(), n, in_);
    ConstMatrixMap<T> wm(weight.value.data(), out_, in_);
    MatrixMap<T> ym(y.data(), n, out_);
    // Row by row so each sample's output does not depend on the batch it sits in.
    for (std::size_t s = 0; s < n; ++s) {
        ym.row(s).noalias() = xm.row(s) * wm.transpose();
        for (std::size_t o = 0; o < out_; ++o) ym(s, o) += bias.value[o];
    }
    return y;
}

template <class T>
BasicTensor<T> Linear<T>::backward(const BasicTensor<T>& dy) {
    const std::size_t n = x_.dim(0);
    if (dy.shape() != Shape{n, out_}) throw ShapeError("linear backward shape mismatch");
    ConstMatrixMap<T> xm(x_.data(), n, in_);
    ConstMatrixMap<T> dym(dy.data(), n, out_);
    ConstMatrixMap<T> wm(weight.value.data(), out_, in_);
    MatrixMap<T> dw(weight.grad.data(), out_, in_);
    dw.noalias() += dym.transpose() * xm;
    for (std::size_t o = 0; o < out_; ++o) bias.grad[o] += dym.col(o).sum();
    BasicTensor<T> dx({n, in_});
    MatrixMap<T> dxm(dx.data(), n, in_);
    dxm.noalias() = dym * wm;
    return dx;
}

template <class T>
double softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> targets,
                             BasicTensor<T>* dlogits) {
    if (logits.rank() != 2) throw ShapeError("logits must be [N, K]");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (targets.size() != n) throw ShapeError("target count does not match batch size");
    if (dlogits) *dlogits = BasicTensor<T>(logits.shape());
    double loss = 0.0;
    std::vector<double> p(k);
    for (std::size_t s = 0; s < n; ++s) {
        const auto t = targets[s];
        if (t < 0 || static_cast<std::size_t>(t) >= k) {
            throw Error("target " + std::to_string(t) + " out of range [0, " + std::to_string(k) + ")");
        }
        const T* row = logits.data() + s * k;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            p[j] = std::exp(row[j] - mx);
            z += p[j];
        }
        loss += std::log(z) - (row[t] - mx);
        if (dlogits) {
            for (std::size_t j = 0; j < k; ++j) {
                const double g = p[j] / z - (j == static_cast<std::size_t>(t) ? 1.0 : 0.0);
                (*dlogits)[s * k + j] = static_cast<T>(g / static_cast<double>(n));
            }
        }
    }
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) throw NumericalError("non-finite loss");
    return loss;
}

// ---------------------------------------------------------------------------
// BasicNetwork

template <class T>
BasicNetwork<T>::BasicNetwork(NetworkGraph graph, std::uint64_t seed)
    : graph_(std::move(graph)), head_(1, 2) {
    if (graph_.blocks.empty()) throw ConfigError("blocks", "network needs at least one block");
    if (graph_.head_width < 2) throw ConfigError("num_clusters", "head width must be at least 2");
    Rng rng(seed);
    std::size_t c = graph_.input_channels, h = graph_.input_height, w = graph_.input_width;
    for (const auto& spec : graph_.blocks) {
        if (spec.out_channels == 0) throw ConfigError("filters", "block " + spec.name + " has no filters");
        if (h + 2 * spec.padding < spec.kernel || w + 2 * spec.padding < spec.kernel) {
            throw ConfigError("input_size", "input too small for block " + spec.name);
        }
        Block b{spec, Conv2d<T>(c, spec.out_channels, spec.kernel, spec.padding), std::nullopt, std::nullopt, {}};
        kaiming_uniform(b.conv.weight.value, c * spec.kernel * spec.kernel, rng);
        if (spec.batchnorm) b.bn.emplace(spec.out_channels);
        c = spec.out_channels;
        h = h + 2 * spec.padding - spec.kernel + 1;
        w = w + 2 * spec.padding - spec.kernel + 1;
        if (spec.pool) {
            if (h % 2 != 0 || w % 2 != 0) {
                throw ConfigError("input_size", "odd spatial size before pooling in block " + spec.name);
            }
            b.pool.emplace();
            h /= 2;
            w /= 2;
        }
        blocks_.push_back(std::move(b));
        block_dims_.push_back(c * h * w);
        block_out_shapes_.push_back({c, h, w});
    }
    reset_head(graph_.head_width, derive_seed(seed, {kHeadStream}));
}

template <class T>
std::optional<std::size_t> BasicNetwork<T>::block_index(const std::string& name) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        if (blocks_[i].spec.name == name) return i;
    }
    return std::nullopt;
}

template <class T>
std::vector<std::size_t> BasicNetwork<T>::branch_pattern() const {
    std::vector<std::size_t> out;
    for (const auto& b : blocks_) {
        out.insert(out.end(), b.relu_mask.begin(), b.relu_mask.end());
        if (b.pool) out.insert(out.end(), b.pool->argmax().begin(), b.pool->argmax().end());
    }
    return out;
}

template <class T>
void BasicNetwork<T>::reset_head(std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("num_clusters", "head width must be at least 2");
    head_ = Linear<T>(feature_dim(), k);
    Rng rng(seed);
    kaiming_uniform(head_.weight.value, feature_dim(), rng);
    graph_.head_width = k;
    head_ran_ = false;
}

template <class T>
BasicTensor<T> BasicNetwork<T>::block_forward(Block& b, const BasicTensor<T>& x) {
    BasicTensor<T> y = b.conv.forward(x);
    if (b.bn) y = b.bn->forward(y, mode_);
    b.relu_mask.assign(y.size(), 0);
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] > T{0}) {
            b.relu_mask[i] = 1;
        } else {
            y[i] = T{0};
        }
    }
    if (b.pool) y = b.pool->forward(y);
    return y;
}

template <class T>
BasicTensor<T> BasicNetwork<T>::block_backward(Block& b, const BasicTensor<T>& dy) {
    BasicTensor<T> g = b.pool ? b.pool->backward(dy) : dy;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!b.relu_mask[i]) g[i] = T{0};
    }
    if (b.bn) g = b.bn->backward(g);
    return b.conv.backward(g);
}

template <class T>
BasicTensor<T> BasicNetwork<T>::run_blocks(const BasicTensor<T>& batch, std::size_t last) {
    const Shape expected{graph_.input_channels, graph_.input_height, graph_.input_width};
    if (batch.rank() != 4 || Shape(batch.shape().begin() + 1, batch.shape().end()) != expected) {
        throw ShapeError("network expects [N," + std::to_string(expected[0]) + "," + std::to_string(expected[1]) +
                         "," + std::to_string(expected[2]) + "], got " + shape_str(batch.shape()));
    }
    require_finite(batch, "input");
    head_ran_ = false;
    BasicTensor<T> x = batch;
    for (std::size_t i = 0; i <= last; ++i) x = block_forward(blocks_[i], x);
    require_finite(x, "activations");
    last_feature_shape_ = x.shape();
    x.reshape({batch.dim(0), block_dims_[last]});
    return x;
}

template <class T>
BasicTensor<T> BasicNetwork<T>::forward(const BasicTensor<T>& batch, Output upto) {
    BasicTensor<T> f = run_blocks(batch, blocks_.size() - 1);
    if (upto == Output::Features) return f;
    BasicTensor<T> logits = head_.forward(f);
    require_finite(logits, "logits");
    head_ran_ = true;
    return logits;
}

template <class T>
BasicTensor<T> BasicNetwork<T>::forward_to(const BasicTensor<T>& batch, std::size_t index) {
    if (index >= blocks_.size()) throw ConfigError("layer", "block index out of range");
    return run_blocks(batch, index);
}

template <class T>
BackwardResult<T> BasicNetwork<T>::backward(const BasicTensor<T>& logits, std::span<const std::int32_t> targets) {
    if (!head_ran_) throw Error("backward requires a preceding forward(..., Logits)");
    BasicTensor<T> dlogits;
    BackwardResult<T> result;
    result.loss = softmax_cross_entropy(logits, targets, &dlogits);

    auto params = parameters();
    for (auto* p : params) p->grad.fill(T{0});

    BasicTensor<T> g = head_.backward(dlogits);
    g.reshape(last_feature_shape_);
    for (std::size_t i = blocks_.size(); i-- > 0;) g = block_backward(blocks_[i], g);

    result.grads.reserve(params.size());
    for (auto* p : params) {
        require_finite(p->grad, "gradients");
        result.grads.push_back(p->grad);
    }
    return result;
}

template <class T>
std::vector<Parameter<T>*> BasicNetwork<T>::feature_parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& b : blocks_) {
        out.push_back(&b.conv.weight);
        out.push_back(&b.conv.bias);
        if (b.bn) {
            out.push_back(&b.bn->gamma);
            out.push_back(&b.bn->beta);
        }
    }
    return out;
}

template <class T>
std::vector<const Parameter<T>*> BasicNetwork<T>::feature_parameters() const {
    auto ps = const_cast<BasicNetwork*>(this)->feature_parameters();
    return {ps.begin(), ps.end()};
}

template <class T>
std::vector<Parameter<T>*> BasicNetwork<T>::head_parameters() {
    return {&head_.weight, &head_.bias};
}

template <class T>
std::vector<Parameter<T>*> BasicNetwork<T>::parameters() {
    auto out = feature_parameters();
    auto head = head_parameters();
    out.insert(out.end(), head.begin(), head.end());
    return out;
}

template <class T>
std::vector<const Parameter<T>*> BasicNetwork<T>::parameters() const {
    auto ps = const_cast<BasicNetwork*>(this)->parameters();
    return {ps.begin(), ps.end()};
}

template <class T>
std::vector<BasicTensor<T>*> BasicNetwork<T>::buffers() {
    std::vector<BasicTensor<T>*> out;
    for (auto& b : blocks_) {
        if (b.bn) {
            out.push_back(&b.bn->running_mean);
            out.push_back(&b.bn->running_var);
        }
    }
    return out;
}

template <class T>
std::vector<const BasicTensor<T>*> BasicNetwork<T>::buffers() const {
    auto bs = const_cast<BasicNetwork*>(this)->buffers();
    return {bs.begin(), bs.end()};
}

Network build_network(const NetworkConfig& config, std::uint64_t seed) {
    return Network(make_graph(config), seed);
}

// ---------------------------------------------------------------------------
// SGD

void validate(const SgdOptions& o) {
    if (!(o.learning_rate > 0.0)) throw ConfigError("learning_rate", "must be > 0");
    if (!(o.momentum >= 0.0 && o.momentum < 1.0)) throw ConfigError("momentum", "must lie in [0, 1)");
    if (!(o.weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be >= 0");
}

template <class T>
OptimizerState<T> make_optimizer_state(const SgdOptions& options, std::span<Parameter<T>* const> params) {
    validate(options);
    OptimizerState<T> state{options, {}};
    for (auto* p : params) state.velocity.emplace_back(p->value.shape());
    return state;
}

template <class T>
void sgd_step(std::span<Parameter<T>* const> params, OptimizerState<T>& state) {
    if (params.size() != state.velocity.size()) throw ShapeError("optimizer state does not match parameter list");
    const T lr = static_cast<T>(state.options.learning_rate);
    const T mom = static_cast<T>(state.options.momentum);
    const T wd = static_cast<T>(state.options.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        auto& v = state.velocity[i];
        if (p.value.shape() != v.shape() || p.grad.shape() != v.shape()) {
            throw ShapeError("parameter " + p.name + " shape does not match its velocity");
        }
        for (std::size_t j = 0; j < v.size(); ++j) {
            const T g = p.grad[j] + wd * p.value[j];
            v[j] = mom * v[j] + g;
            p.value[j] -= lr * v[j];
        }
    }
}

std::uint64_t feature_hash(const Network& net) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const Tensor& t) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
        for (std::size_t i = 0; i < t.size() * sizeof(float); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto* p : net.feature_parameters()) mix(p->value);
    for (const auto* b : net.buffers()) mix(*b);
    return h;
}

#define DCL_INSTANTIATE(T)                                                                                   \
    template class Conv2d<T>;                                                                                \
    template class BatchNorm2d<T>;                                                                           \
    template class MaxPool2x2<T>;                                                                            \
    template class Linear<T>;                                                                                \
    template class BasicNetwork<T>;                                                                          \
    template double softmax_cross_entropy<T>(const BasicTensor<T>&, std::span<const std::int32_t>,          \
                                             BasicTensor<T>*);                                               \
    template OptimizerState<T> make_optimizer_state<T>(const SgdOptions&, std::span<Parameter<T>* const>); \
    template void sgd_step<T>(std::span<Parameter<T>* const>, OptimizerState<T>&);

DCL_INSTANTIATE(float)
DCL_INSTANTIATE(double)

#undef DCL_INSTANTIATE

}  // namespace dcl
