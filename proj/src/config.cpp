#include "dcl/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace dcl {

using nlohmann::json;

namespace {

/// Strict view of one JSON object: typed getters record which keys were
/// read, and finish() rejects everything else.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected a JSON object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <class T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(full(key), "wrong type (got " + std::string(j_.at(key).type_name()) + ")");
        }
    }

    void get_count(const std::string& key, std::size_t& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const auto& v = j_.at(key);
        if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(full(key), "expected a non-negative integer");
        out = v.get<std::size_t>();
    }

    void get_optional_count(const std::string& key, std::optional<std::size_t>& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        if (j_.at(key).is_null()) {
            out.reset();
            return;
        }
        std::size_t v = 0;
        get_count(key, v);
        out = v;
    }

    Section child(const std::string& key) {
        seen_.insert(key);
        static const json empty = json::object();
        return Section(j_.contains(key) ? j_.at(key) : empty, full(key));
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) throw ConfigError(full(key), "unknown key");
        }
    }

    std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

json optional_count(const std::optional<std::size_t>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

void RunConfig::validate() const {
    if (format_version != kConfigFormatVersion) {
        throw ConfigError("format_version", "unsupported format version " + std::to_string(format_version));
    }
    if (dataset.format != "idx" && dataset.format != "raw") throw ConfigError("dataset.format", "must be idx or raw");
    if (dataset.channels != 1 && dataset.channels != 3) throw ConfigError("dataset.channels", "must be 1 or 3");
    if (dataset.num_classes < 2) throw ConfigError("dataset.num_classes", "must be at least 2");
    try {
        transforms.validate(dataset.channels);
    } catch (const ConfigError& e) {
        throw ConfigError("transforms." + e.key, e.detail);
    }
    if (num_clusters < 2) {
        throw ConfigError("clustering.num_clusters",
                          "must be at least 2 (got " + std::to_string(num_clusters) +
                              "); a single cluster gives constant pseudo-labels and nothing to learn");
    }
    if (dataset.max_samples != 0 && num_clusters > dataset.max_samples) {
        throw ConfigError("clustering.num_clusters", "exceeds dataset.max_samples");
    }
    if (pca_components && *pca_components == 0) {
        throw ConfigError("clustering.pca_components", "must be positive, or null to disable PCA");
    }
    if (num_cycles == 0) throw ConfigError("training.num_cycles", "must be positive");
    if (epochs_per_cycle == 0) throw ConfigError("training.epochs_per_cycle", "must be positive");
    if (batch_size == 0) throw ConfigError("training.batch_size", "must be positive");
    if (extract_batch_size == 0) throw ConfigError("clustering.extract_batch_size", "must be positive");
    if (halt_cycle && (*halt_cycle < 1 || *halt_cycle > num_cycles)) {
        throw ConfigError("clustering.halt_cycle", "must lie in [1, num_cycles]");
    }
    if (kmeans_max_iter == 0) throw ConfigError("clustering.kmeans_max_iter", "must be positive");
    if (!(kmeans_tol >= 0.0)) throw ConfigError("clustering.kmeans_tol", "must be >= 0");
    if (!(whitening_epsilon >= 0.0)) throw ConfigError("clustering.whitening_epsilon", "must be >= 0");
    try {
        dcl::validate(sgd_options());
    } catch (const ConfigError& e) {
        throw ConfigError("training." + e.key, e.detail);
    }
    if (probe.epochs == 0) throw ConfigError("probe.epochs", "must be positive");
    if (probe.batch_size == 0) throw ConfigError("probe.batch_size", "must be positive");
    try {
        dcl::validate(SgdOptions{probe.learning_rate, probe.momentum, probe.weight_decay});
    } catch (const ConfigError& e) {
        throw ConfigError("probe." + e.key, e.detail);
    }
    try {
        const NetworkGraph g = make_graph(network_config());
        const std::string layer = probe_layer();
        bool found = false;
        for (const auto& b : g.blocks) found = found || b.name == layer;
        if (!found) throw ConfigError("probe.layer", "no block named '" + layer + "'");
    } catch (const ConfigError& e) {
        throw ConfigError(e.key.rfind("probe", 0) == 0 ? e.key : "network." + e.key, e.detail);
    }
}

NetworkConfig RunConfig::network_config() const {
    NetworkConfig n;
    n.architecture = architecture;
    n.input_channels = dataset.channels;
    n.input_size = transforms.crop_size;
    n.use_batchnorm = use_batchnorm;
    n.use_sobel = transforms.sobel;
    n.num_classes = num_clusters;
    n.filters = filters;
    return n;
}

ClusterSettings RunConfig::cluster_settings() const {
    ClusterSettings s;
    s.num_clusters = num_clusters;
    s.pca_components = pca_components;
    s.whitening_epsilon = whitening_epsilon;
    s.kmeans = KMeansOptions{kmeans_max_iter, kmeans_tol};
    s.batch_size = extract_batch_size;
    return s;
}

SgdOptions RunConfig::sgd_options() const { return SgdOptions{learning_rate, momentum, weight_decay}; }

std::string RunConfig::probe_layer() const {
    if (!probe.layer.empty()) return probe.layer;
    const auto n = filters.empty() ? (architecture == Architecture::LeNet5Variant ? 2 : 5) : filters.size();
    return "conv" + std::to_string(n);
}

json to_json(const RunConfig& c) {
    json j;
    j["format_version"] = c.format_version;
    j["seed"] = c.seed;
    j["dataset"] = {{"name", c.dataset.name},
                    {"format", c.dataset.format},
                    {"max_samples", c.dataset.max_samples},
                    {"test_max_samples", c.dataset.test_max_samples},
                    {"subset_seed", c.dataset.subset_seed},
                    {"channels", c.dataset.channels},
                    {"image_size", c.dataset.image_size},
                    {"num_classes", c.dataset.num_classes}};
    j["transforms"] = {{"normalize_mean", c.transforms.normalize_mean},
                       {"normalize_std", c.transforms.normalize_std},
                       {"resize_to", c.transforms.resize_to},
                       {"crop_size", c.transforms.crop_size},
                       {"horizontal_flip", c.transforms.horizontal_flip},
                       {"sobel", c.transforms.sobel}};
    j["network"] = {{"architecture", to_string(c.architecture)},
                    {"use_batchnorm", c.use_batchnorm},
                    {"filters", c.filters}};
    j["training"] = {{"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"momentum", c.momentum},
                     {"batch_size", c.batch_size},
                     {"num_cycles", c.num_cycles},
                     {"epochs_per_cycle", c.epochs_per_cycle}};
    j["clustering"] = {{"num_clusters", c.num_clusters},
                       {"pca_components", optional_count(c.pca_components)},
                       {"halt_cycle", optional_count(c.halt_cycle)},
                       {"kmeans_max_iter", c.kmeans_max_iter},
                       {"kmeans_tol", c.kmeans_tol},
                       {"whitening_epsilon", c.whitening_epsilon},
                       {"extract_batch_size", c.extract_batch_size}};
    j["probe"] = {{"layer", c.probe.layer},
                  {"epochs", c.probe.epochs},
                  {"learning_rate", c.probe.learning_rate},
                  {"momentum", c.probe.momentum},
                  {"weight_decay", c.probe.weight_decay},
                  {"batch_size", c.probe.batch_size}};
    j["output"] = {{"checkpoint_every", c.checkpoint_every}, {"dump_clusters", c.dump_clusters}};
    return j;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    Section root(j, "");
    if (!root.has("format_version")) throw ConfigError("format_version", "required field is missing");
    root.get("format_version", c.format_version);
    root.get("seed", c.seed);

    {
        Section s = root.child("dataset");
        s.get("name", c.dataset.name);
        s.get("format", c.dataset.format);
        s.get_count("max_samples", c.dataset.max_samples);
        s.get_count("test_max_samples", c.dataset.test_max_samples);
        s.get("subset_seed", c.dataset.subset_seed);
        s.get_count("channels", c.dataset.channels);
        s.get_count("image_size", c.dataset.image_size);
        s.get_count("num_classes", c.dataset.num_classes);
        s.finish();
    }
    {
        Section s = root.child("transforms");
        s.get("normalize_mean", c.transforms.normalize_mean);
        s.get("normalize_std", c.transforms.normalize_std);
        s.get_count("resize_to", c.transforms.resize_to);
        s.get_count("crop_size", c.transforms.crop_size);
        s.get("horizontal_flip", c.transforms.horizontal_flip);
        s.get("sobel", c.transforms.sobel);
        s.finish();
    }
    {
        Section s = root.child("network");
        std::string arch = to_string(c.architecture);
        s.get("architecture", arch);
        try {
            c.architecture = architecture_from_string(arch);
        } catch (const ConfigError& e) {
            throw ConfigError("network.architecture", e.detail);
        }
        s.get("use_batchnorm", c.use_batchnorm);
        s.get("filters", c.filters);
        s.finish();
    }
    {
        Section s = root.child("training");
        s.get("learning_rate", c.learning_rate);
        s.get("weight_decay", c.weight_decay);
        s.get("momentum", c.momentum);
        s.get_count("batch_size", c.batch_size);
        s.get_count("num_cycles", c.num_cycles);
        s.get_count("epochs_per_cycle", c.epochs_per_cycle);
        s.finish();
    }
    {
        Section s = root.child("clustering");
        s.get_count("num_clusters", c.num_clusters);
        s.get_optional_count("pca_components", c.pca_components);
        s.get_optional_count("halt_cycle", c.halt_cycle);
        s.get_count("kmeans_max_iter", c.kmeans_max_iter);
        s.get("kmeans_tol", c.kmeans_tol);
        s.get("whitening_epsilon", c.whitening_epsilon);
        s.get_count("extract_batch_size", c.extract_batch_size);
        s.finish();
    }
    {
        Section s = root.child("probe");
        s.get("layer", c.probe.layer);
        s.get_count("epochs", c.probe.epochs);
        s.get("learning_rate", c.probe.learning_rate);
        s.get("momentum", c.probe.momentum);
        s.get("weight_decay", c.probe.weight_decay);
        s.get_count("batch_size", c.probe.batch_size);
        s.finish();
    }
    {
        Section s = root.child("output");
        s.get_count("checkpoint_every", c.checkpoint_every);
        s.get("dump_clusters", c.dump_clusters);
        s.finish();
    }
    root.finish();
    c.validate();
    return c;
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        // Translate the byte offset into line/column.
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError("", path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) +
                                  ": JSON syntax error: " + e.what());
    }
}

RunConfig load_run_config(const std::filesystem::path& path) {
    const json j = read_json_file(path);
    try {
        return run_config_from_json(j);
    } catch (const ConfigError& e) {
        throw ConfigError(e.key, path.string() + ": " + e.detail);
    }
}

void apply_override(RunConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("", "override '" + assignment + "' is not key=value");
    std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    json j = to_json(config);
    std::string section, field;
    if (const auto dot = key.find('.'); dot != std::string::npos) {
        section = key.substr(0, dot);
        field = key.substr(dot + 1);
    } else if (j.contains(key) && !j[key].is_object()) {
        field = key;
    } else {
        for (const auto& [name, value] : j.items()) {
            if (value.is_object() && value.contains(key)) {
                if (!section.empty()) throw ConfigError(key, "ambiguous override; qualify it with a section");
                section = name;
            }
        }
        if (section.empty()) throw ConfigError(key, "unknown key");
        field = key;
    }

    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;  // bare strings such as layer names
    }
    json& target = section.empty() ? j : j[section];
    if (!target.is_object() || !target.contains(field)) {
        throw ConfigError(section.empty() ? field : section + "." + field, "unknown key");
    }
    target[field] = value;
    config = run_config_from_json(j);
}

}  // namespace dcl
