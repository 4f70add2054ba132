#include "dcl/pipeline.hpp"

#include <chrono>
#include <numeric>

#include "dcl/binary_io.hpp"
#include "dcl/clustering.hpp"
#include "dcl/features.hpp"
#include "dcl/metrics.hpp"
#include "dcl/rng.hpp"

namespace dcl {

namespace {

constexpr std::uint64_t kClusterStream = 1;
constexpr std::uint64_t kHeadStream = 2;
constexpr std::uint64_t kTrainStream = 3;
constexpr std::uint64_t kProbeStream = 4;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<std::int32_t> gather(const std::vector<std::int32_t>& labels, const std::vector<std::size_t>& idx) {
    std::vector<std::int32_t> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(labels[i]);
    return out;
}

double train_epoch(Network& net, OptimizerState<float>& state, const ImageDataset& train, const TransformSpec& spec,
                   const std::vector<std::int32_t>& targets, std::size_t batch_size, std::uint64_t seed) {
    net.set_mode(Mode::Train);
    BatchStream stream(train, spec, Phase::Train, batch_size, seed);
    auto params = net.parameters();
    double loss_sum = 0.0;
    std::size_t seen = 0;
    while (auto b = stream.next()) {
        const auto t = gather(targets, b->indices);
        const Tensor logits = net.forward(b->images, Output::Logits);
        const auto result = net.backward(logits, t);
        sgd_step<float>(params, state);
        loss_sum += result.loss * static_cast<double>(t.size());
        seen += t.size();
    }
    return loss_sum / static_cast<double>(seen);
}

}  // namespace

double RunLog::total_cluster_seconds() const {
    double s = 0.0;
    for (const auto& c : cycles) s += c.cluster_seconds;
    return s;
}

RunLog run_deepcluster(const RunConfig& config, const ImageDataset& train, const RunHooks& hooks) {
    config.validate();
    train.validate();
    if (config.num_clusters > train.count) {
        throw ConfigError("clustering.num_clusters", "exceeds the number of training samples");
    }

    RunLog log{{}, build_network(config.network_config(), config.seed), 0};
    Network& net = log.network;
    auto params = net.parameters();
    OptimizerState<float> state = make_optimizer_state<float>(config.sgd_options(), params);
    const ClusterSettings settings = config.cluster_settings();
    const std::size_t head_params = net.head_parameters().size();

    std::vector<std::int32_t> labels;
    double inertia = 0.0;
    std::size_t kmeans_iterations = 0;

    for (std::size_t c = 0; c < config.num_cycles; ++c) {
        CycleRecord rec;
        rec.cycle = c;
        try {
            const bool cluster = !config.halt_cycle || c < *config.halt_cycle;
            auto t0 = std::chrono::steady_clock::now();
            std::vector<std::int32_t> next = labels;
            if (cluster) {
                const KMeansResult km = cluster_dataset(net, train, config.transforms, settings,
                                                        derive_seed(config.seed, {kClusterStream, c}));
                next = km.assignments;
                rec.clustering = km;
                inertia = km.inertia;
                kmeans_iterations = km.iterations_run;
                ++log.clustering_invocations;

                net.reset_head(config.num_clusters, derive_seed(config.seed, {kHeadStream, c}));
                // Fresh head parameters start with zero momentum.
                auto ps = net.parameters();
                for (std::size_t i = ps.size() - head_params; i < ps.size(); ++i) {
                    state.velocity[i] = Tensor(ps[i]->value.shape());
                }
                params = ps;
            }
            rec.clustered = cluster;
            rec.cluster_seconds = seconds_since(t0);
            rec.inertia = inertia;
            rec.kmeans_iterations = kmeans_iterations;
            if (c > 0) rec.nmi_prev = cycle_consistency(labels, next);
            if (train.labels) rec.nmi_truth = nmi(next, *train.labels);
            labels = std::move(next);
            rec.pseudo_labels = labels;

            t0 = std::chrono::steady_clock::now();
            double loss = 0.0;
            for (std::size_t e = 0; e < config.epochs_per_cycle; ++e) {
                loss = train_epoch(net, state, train, config.transforms, labels, config.batch_size,
                                   derive_seed(config.seed, {kTrainStream, c, e}));
            }
            rec.mean_loss = loss;
            rec.train_seconds = seconds_since(t0);
        } catch (const NumericalError& e) {
            if (hooks.on_failure) hooks.on_failure(rec, net, e);
            throw NumericalError("cycle " + std::to_string(c) + " aborted: " + e.what());
        } catch (const std::exception& e) {
            if (hooks.on_failure) hooks.on_failure(rec, net, e);
            throw;
        }
        log.cycles.push_back(rec);
        if (hooks.on_cycle) hooks.on_cycle(log.cycles.back(), net);
    }
    net.set_mode(Mode::Eval);
    return log;
}

ProbeResult linear_probe(Network& net, const std::string& layer, const ImageDataset& train, const ImageDataset& test,
                         const TransformSpec& spec, const ProbeConfig& probe, std::uint64_t seed) {
    if (!net.block_index(layer)) throw ConfigError("probe.layer", "no block named '" + layer + "' in network");
    if (!train.labels || !test.labels) throw ConfigError("dataset", "linear probing needs labelled train and test sets");
    const std::size_t classes = std::max(train.class_count, test.class_count);

    const FeatureMatrix ftrain = extract_features(net, train, spec, 256, layer);
    const FeatureMatrix ftest = extract_features(net, test, spec, 256, layer);

    Linear<float> clf(ftrain.dims, classes);
    std::vector<Parameter<float>*> params{&clf.weight, &clf.bias};
    auto state = make_optimizer_state<float>(SgdOptions{probe.learning_rate, probe.momentum, probe.weight_decay}, params);

    ProbeResult result;
    result.layer = layer;
    result.feature_dim = ftrain.dims;

    std::vector<std::size_t> order(ftrain.rows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {kProbeStream}));
    for (std::size_t epoch = 0; epoch < probe.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += probe.batch_size) {
            const std::size_t end = std::min(start + probe.batch_size, order.size());
            Tensor x({end - start, ftrain.dims});
            std::vector<std::int32_t> t;
            for (std::size_t i = start; i < end; ++i) {
                const auto row = ftrain.row(order[i]);
                std::copy(row.begin(), row.end(), x.data() + (i - start) * ftrain.dims);
                t.push_back((*train.labels)[order[i]]);
            }
            const Tensor logits = clf.forward(x);
            Tensor dlogits;
            const double loss = softmax_cross_entropy(logits, t, &dlogits);
            clf.weight.grad.fill(0.0f);
            clf.bias.grad.fill(0.0f);
            clf.backward(dlogits);
            sgd_step<float>(params, state);
            loss_sum += loss * static_cast<double>(t.size());
        }
        result.epoch_losses.push_back(loss_sum / static_cast<double>(order.size()));
    }

    auto evaluate = [&](const FeatureMatrix& f, const std::vector<std::int32_t>& truth) {
        Tensor x({f.rows, f.dims}, f.data);
        const Tensor logits = clf.forward(x);
        std::vector<std::int32_t> pred(f.rows);
        for (std::size_t r = 0; r < f.rows; ++r) {
            const float* row = logits.data() + r * classes;
            pred[r] = static_cast<std::int32_t>(std::max_element(row, row + classes) - row);
        }
        return accuracy(pred, truth);
    };
    result.train_accuracy = evaluate(ftrain, *train.labels);
    result.test_accuracy = evaluate(ftest, *test.labels);
    return result;
}

std::vector<HaltSweepEntry> halt_sweep(const RunConfig& config, const std::vector<std::optional<std::size_t>>& halt_points,
                                       const ImageDataset& train, const ImageDataset& test) {
    std::vector<HaltSweepEntry> out;
    for (const auto& h : halt_points) {
        RunConfig c = config;
        c.halt_cycle = h;
        HaltSweepEntry e{h, 0.0, 0.0, 0, run_deepcluster(c, train)};
        e.probe_accuracy = linear_probe(e.log.network, c.probe_layer(), train, test, c.transforms, c.probe, c.seed)
                               .test_accuracy;
        e.cluster_seconds = e.log.total_cluster_seconds();
        e.clustering_invocations = e.log.clustering_invocations;
        out.push_back(std::move(e));
    }
    return out;
}

// ---------------------------------------------------------------------------

nlohmann::json graph_to_json(const NetworkGraph& g) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : g.blocks) {
        blocks.push_back({{"name", b.name},
                          {"out_channels", b.out_channels},
                          {"kernel", b.kernel},
                          {"padding", b.padding},
                          {"batchnorm", b.batchnorm},
                          {"pool", b.pool}});
    }
    return {{"input_channels", g.input_channels},
            {"input_height", g.input_height},
            {"input_width", g.input_width},
            {"head_width", g.head_width},
            {"blocks", blocks}};
}

NetworkGraph graph_from_json(const nlohmann::json& j) {
    try {
        NetworkGraph g;
        g.input_channels = j.at("input_channels").get<std::size_t>();
        g.input_height = j.at("input_height").get<std::size_t>();
        g.input_width = j.at("input_width").get<std::size_t>();
        g.head_width = j.at("head_width").get<std::size_t>();
        for (const auto& b : j.at("blocks")) {
            g.blocks.push_back({b.at("name").get<std::string>(), b.at("out_channels").get<std::size_t>(),
                                b.at("kernel").get<std::size_t>(), b.at("padding").get<std::size_t>(),
                                b.at("batchnorm").get<bool>(), b.at("pool").get<bool>()});
        }
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed network description: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const Network& net, const nlohmann::json& metadata) {
    nlohmann::json header = {{"graph", graph_to_json(net.graph())}, {"metadata", metadata}};
    BinaryWriter w(path);
    w.bytes("DCKP", 4);
    w.u32(kCheckpointVersion);
    w.str(header.dump());
    const auto params = net.parameters();
    const auto bufs = net.buffers();
    w.u32(static_cast<std::uint32_t>(params.size() + bufs.size()));
    auto put = [&w](const std::string& name, const Tensor& t) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (float v : t.values()) w.f32(v);
    };
    for (std::size_t i = 0; i < params.size(); ++i) put("param" + std::to_string(i) + "." + params[i]->name, params[i]->value);
    for (std::size_t i = 0; i < bufs.size(); ++i) put("buffer" + std::to_string(i), *bufs[i]);
    w.close();
}

Network load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata) {
    BinaryReader r(path);
    r.expect_magic("DCKP");
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.str());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": corrupt header: " + e.what());
    }
    Network net(graph_from_json(header.at("graph")), 0);
    if (metadata) *metadata = header.value("metadata", nlohmann::json{});

    std::vector<Tensor*> slots;
    for (auto* p : net.parameters()) slots.push_back(&p->value);
    for (auto* b : net.buffers()) slots.push_back(b);
    const auto count = r.u32();
    if (count != slots.size()) throw DataError(path.string() + ": tensor count does not match the network");
    for (auto* slot : slots) {
        r.str();
        Shape shape(r.u32());
        for (auto& d : shape) d = r.u32();
        if (shape != slot->shape()) throw DataError(path.string() + ": tensor shape mismatch");
        for (auto& v : slot->values()) v = r.f32();
    }
    net.set_mode(Mode::Eval);
    return net;
}

}  // namespace dcl
