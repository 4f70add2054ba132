#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcl/tensor.hpp"

namespace dcl {

enum class Mode { Train, Eval };
enum class Output { Features, Logits };

template <class T>
struct Parameter {
    std::string name;
    BasicTensor<T> value;
    BasicTensor<T> grad;
};

/// One convolutional block: conv -> [batchnorm] -> ReLU -> [2x2 max-pool].
struct BlockSpec {
    std::string name;
    std::size_t out_channels = 0;
    std::size_t kernel = 3;
    std::size_t padding = 0;
    bool batchnorm = true;
    bool pool = false;
};

/// Full description of a network: input geometry, feature blocks, head width.
struct NetworkGraph {
    std::size_t input_channels = 1;
    std::size_t input_height = 28;
    std::size_t input_width = 28;
    std::vector<BlockSpec> blocks;
    std::size_t head_width = 10;
};

enum class Architecture { LeNet5Variant, MiniAlexNet };

struct NetworkConfig {
    Architecture architecture = Architecture::LeNet5Variant;
    /// Channels of the dataset images (1 or 3). With `use_sobel` the network
    /// itself sees the 2 gradient channels instead.
    std::size_t input_channels = 1;
    std::size_t input_size = 28;
    bool use_batchnorm = true;
    bool use_sobel = false;
    std::size_t num_classes = 10;
    /// Empty means the architecture default: {6, 16} or {48, 126, 192, 192, 128}.
    std::vector<std::size_t> filters;
};

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);

/// Block list and head for one of the two supported architectures. Throws
/// ConfigError on invalid filter counts or an input size the pooling schedule
/// cannot divide.
NetworkGraph make_graph(const NetworkConfig& config);

// ---------------------------------------------------------------------------
// Layers. Each caches what its backward pass needs from the last forward.

template <class T>
class Conv2d {
public:
    Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t padding);

    BasicTensor<T> forward(const BasicTensor<T>& x);
    /// Accumulates into weight.grad / bias.grad and returns dL/dx.
    BasicTensor<T> backward(const BasicTensor<T>& dy);

    std::size_t in_channels() const { return in_; }
    std::size_t out_channels() const { return out_; }
    std::size_t kernel() const { return k_; }
    std::size_t padding() const { return pad_; }

    Parameter<T> weight;  // [out, in, k, k]
    Parameter<T> bias;    // [out]

private:
    std::size_t in_, out_, k_, pad_;
    Shape in_shape_;
    std::size_t out_h_ = 0, out_w_ = 0;
    std::vector<T> cols_;
};

template <class T>
class BatchNorm2d {
public:
    explicit BatchNorm2d(std::size_t channels, double momentum = 0.1, double eps = 1e-5);

    BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode);
    BasicTensor<T> backward(const BasicTensor<T>& dy);

    Parameter<T> gamma;
    Parameter<T> beta;
    BasicTensor<T> running_mean;
    BasicTensor<T> running_var;

private:
    double momentum_, eps_;
    Mode last_mode_ = Mode::Eval;
    BasicTensor<T> xhat_;
    std::vector<double> inv_std_;
};

template <class T>
class MaxPool2x2 {
public:
    BasicTensor<T> forward(const BasicTensor<T>& x);
    BasicTensor<T> backward(const BasicTensor<T>& dy);
    const std::vector<std::size_t>& argmax() const { return argmax_; }

private:
    Shape in_shape_;
    std::vector<std::size_t> argmax_;
};

template <class T>
class Linear {
public:
    Linear(std::size_t in_features, std::size_t out_features);

    /// x: [N, in] -> [N, out]
    BasicTensor<T> forward(const BasicTensor<T>& x);
    BasicTensor<T> backward(const BasicTensor<T>& dy);

    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }

    Parameter<T> weight;  // [out, in]
    Parameter<T> bias;    // [out]

private:
    std::size_t in_, out_;
    BasicTensor<T> x_;
};

/// Mean softmax cross-entropy. Returns the loss (accumulated in double) and
/// writes dL/dlogits into `dlogits`.
template <class T>
double softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> targets,
                             BasicTensor<T>* dlogits);

// ---------------------------------------------------------------------------

template <class T>
struct BackwardResult {
    double loss = 0.0;
    /// One gradient per entry of parameters(), same order and shapes.
    std::vector<BasicTensor<T>> grads;
};

template <class T>
class BasicNetwork {
public:
    /// Kaiming-uniform (fan-in, ReLU gain) weights, zero biases, gamma=1, beta=0.
    BasicNetwork(NetworkGraph graph, std::uint64_t seed);

    const NetworkGraph& graph() const { return graph_; }
    Mode mode() const { return mode_; }
    void set_mode(Mode m) { mode_ = m; }

    /// Flattened output size of the last block.
    std::size_t feature_dim() const { return block_dims_.back(); }
    /// Flattened output size of block `index`.
    std::size_t block_dim(std::size_t index) const { return block_dims_.at(index); }
    std::size_t head_width() const { return head_.out_features(); }
    std::size_t block_count() const { return blocks_.size(); }
    /// Index of the block called `name`; nullopt if absent.
    std::optional<std::size_t> block_index(const std::string& name) const;

    /// batch: [N, C, H, W]. Features -> [N, feature_dim]; Logits -> [N, K].
    BasicTensor<T> forward(const BasicTensor<T>& batch, Output upto);
    /// Flattened output of block `index` (inclusive); never touches the head.
    BasicTensor<T> forward_to(const BasicTensor<T>& batch, std::size_t index);

    /// Backpropagates mean cross-entropy of the logits from the most recent
    /// forward(..., Logits). Leaves the gradients in each Parameter::grad as well.
    BackwardResult<T> backward(const BasicTensor<T>& logits, std::span<const std::int32_t> targets);

    /// Replaces the head with a freshly initialized width-k linear layer.
    void reset_head(std::size_t k, std::uint64_t seed);

    std::vector<Parameter<T>*> parameters();
    std::vector<const Parameter<T>*> parameters() const;
    std::vector<Parameter<T>*> feature_parameters();
    std::vector<const Parameter<T>*> feature_parameters() const;
    std::vector<Parameter<T>*> head_parameters();
    /// Batchnorm running statistics (mean, var per batchnorm layer).
    std::vector<BasicTensor<T>*> buffers();
    std::vector<const BasicTensor<T>*> buffers() const;

    /// Branch taken by every ReLU and max-pool unit in the last forward pass.
    /// Two passes with equal patterns lie on the same linear piece.
    std::vector<std::size_t> branch_pattern() const;

    /// Same graph with every parameter and buffer converted to U.
    template <class U>
    BasicNetwork<U> cast() const;

private:
    struct Block {
        BlockSpec spec;
        Conv2d<T> conv;
        std::optional<BatchNorm2d<T>> bn;
        std::optional<MaxPool2x2<T>> pool;
        std::vector<unsigned char> relu_mask;
    };

    BasicTensor<T> run_blocks(const BasicTensor<T>& batch, std::size_t last);
    BasicTensor<T> block_forward(Block& b, const BasicTensor<T>& x);
    BasicTensor<T> block_backward(Block& b, const BasicTensor<T>& dy);

    NetworkGraph graph_;
    std::vector<Block> blocks_;
    std::vector<std::size_t> block_dims_;
    std::vector<Shape> block_out_shapes_;
    Linear<T> head_;
    Mode mode_ = Mode::Train;
    Shape last_feature_shape_;
    bool head_ran_ = false;
};

using Network = BasicNetwork<float>;

Network build_network(const NetworkConfig& config, std::uint64_t seed);

template <class T>
template <class U>
BasicNetwork<U> BasicNetwork<T>::cast() const {
    BasicNetwork<U> out(graph_, 0);
    auto src = parameters();
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i]->value = src[i]->value.template cast<U>();
        dst[i]->grad = BasicTensor<U>(src[i]->value.shape());
    }
    auto sb = buffers();
    auto db = out.buffers();
    for (std::size_t i = 0; i < sb.size(); ++i) *db[i] = sb[i]->template cast<U>();
    out.set_mode(mode_);
    return out;
}

// ---------------------------------------------------------------------------

struct SgdOptions {
    double learning_rate = 0.1;
    double momentum = 0.0;
    double weight_decay = 0.0;
};

/// Momentum buffers, one per parameter in the order they are passed to sgd_step.
template <class T>
struct OptimizerState {
    SgdOptions options;
    std::vector<BasicTensor<T>> velocity;
};

/// Throws ConfigError unless lr > 0, momentum in [0, 1), weight_decay >= 0.
void validate(const SgdOptions& options);

template <class T>
OptimizerState<T> make_optimizer_state(const SgdOptions& options, std::span<Parameter<T>* const> params);

/// g' = g + wd * w;  v = momentum * v + g';  w -= lr * v.
template <class T>
void sgd_step(std::span<Parameter<T>* const> params, OptimizerState<T>& state);

/// FNV-1a over the bytes of every feature-extractor parameter and buffer.
std::uint64_t feature_hash(const Network& net);

}  // namespace dcl
