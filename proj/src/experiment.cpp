#include "dcl/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dcl/features.hpp"
#include "dcl/metrics.hpp"

namespace dcl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

std::string value_tag(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
    std::ofstream out(path, std::ios::out | mode);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    return out;
}

void write_json(const fs::path& path, const json& j) {
    auto out = open_out(path);
    out << j.dump(2) << '\n';
    if (!out) throw Error("write failed: " + path.string());
}

fs::path require_file(const fs::path& p) {
    if (!fs::is_regular_file(p)) throw DataError("dataset file not found: " + p.string());
    return p;
}

std::string cycle_name(const char* stem, std::size_t cycle, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%03zu%s", stem, cycle, ext);
    return buf;
}

const char* kMetricsHeader = "cycle,clustered,inertia,kmeans_iterations,nmi_prev,nmi_truth,loss\n";
const char* kTimingsHeader = "cycle,cluster_seconds,train_seconds\n";

std::string metrics_row(const CycleRecord& r) {
    return std::to_string(r.cycle) + ',' + (r.clustered ? "1" : "0") + ',' + num(r.inertia) + ',' +
           std::to_string(r.kmeans_iterations) + ',' + opt_num(r.nmi_prev) + ',' + opt_num(r.nmi_truth) + ',' +
           num(r.mean_loss) + '\n';
}

std::string timings_row(const CycleRecord& r) {
    return std::to_string(r.cycle) + ',' + num(r.cluster_seconds) + ',' + num(r.train_seconds) + '\n';
}

json checkpoint_metadata(const RunConfig& config, std::optional<std::size_t> cycle) {
    json m = {{"config", to_json(config)}};
    m["cycle"] = cycle ? json(*cycle) : json(nullptr);
    return m;
}

json probe_json(const ProbeResult& p) {
    return {{"layer", p.layer},
            {"feature_dim", p.feature_dim},
            {"train_accuracy", p.train_accuracy},
            {"test_accuracy", p.test_accuracy},
            {"epoch_losses", p.epoch_losses}};
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, sep)) out.push_back(cell);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

void apply_axis(RunConfig& c, const std::string& axis, double v) {
    auto as_count = [&]() {
        if (v < 0.0 || v != static_cast<double>(static_cast<std::uint64_t>(v))) {
            throw ConfigError("values", "axis '" + axis + "' takes non-negative integers, got " + value_tag(v));
        }
        return static_cast<std::uint64_t>(v);
    };
    if (axis == "k") {
        c.num_clusters = as_count();
    } else if (axis == "seed") {
        c.seed = as_count();
    } else if (axis == "halt") {
        const auto h = as_count();
        c.halt_cycle = h == 0 ? std::nullopt : std::optional<std::size_t>(h);
    } else if (axis == "pca") {
        const auto d = as_count();
        c.pca_components = d == 0 ? std::nullopt : std::optional<std::size_t>(d);
    } else {
        throw ConfigError("axis", "unknown sweep axis '" + axis + "' (expected k, seed, halt or pca)");
    }
    c.validate();
}

}  // namespace

// ---------------------------------------------------------------------------

json to_json(const ExperimentManifest& m) {
    return {{"format_version", m.format_version},
            {"command", m.command},
            {"config", to_json(m.config)},
            {"out_dir", m.out_dir.string()},
            {"args", m.args}};
}

ExperimentManifest manifest_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("manifest", "expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (key != "format_version" && key != "command" && key != "config" && key != "out_dir" && key != "args") {
            throw ConfigError(key, "unknown manifest key");
        }
    }
    ExperimentManifest m;
    if (!j.contains("format_version") || !j["format_version"].is_number_integer()) {
        throw ConfigError("format_version", "required integer");
    }
    m.format_version = j["format_version"].get<int>();
    if (m.format_version != kManifestFormatVersion) {
        throw ConfigError("format_version", "unsupported manifest version " + std::to_string(m.format_version));
    }
    if (!j.contains("command") || !j["command"].is_string()) throw ConfigError("command", "required string");
    m.command = j["command"].get<std::string>();
    if (!j.contains("config")) throw ConfigError("config", "required");
    try {
        m.config = run_config_from_json(j["config"]);
    } catch (const ConfigError& e) {
        throw ConfigError("config." + e.key, e.detail);
    }
    if (!j.contains("out_dir") || !j["out_dir"].is_string()) throw ConfigError("out_dir", "required string");
    m.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("args")) {
        if (!j["args"].is_object()) throw ConfigError("args", "expected an object");
        m.args = j["args"];
    }
    return m;
}

void write_manifest(const ExperimentManifest& m) {
    if (m.out_dir.empty()) throw ConfigError("out", "output directory is required");
    fs::create_directories(m.out_dir);
    write_json(m.out_dir / "manifest.json", to_json(m));
}

fs::path data_root_from_env() {
    const char* v = std::getenv("DCL_DATA_ROOT");
    return (v && *v) ? fs::path(v) : fs::path("data");
}

Datasets load_datasets(const RunConfig& config, const fs::path& root) {
    const auto& d = config.dataset;
    const fs::path dir = root / d.name;
    Datasets out;
    if (d.format == "idx") {
        out.train = load_idx(require_file(dir / "train-images-idx3-ubyte"), require_file(dir / "train-labels-idx1-ubyte"),
                             d.num_classes, Split::Train);
        out.test = load_idx(require_file(dir / "t10k-images-idx3-ubyte"), require_file(dir / "t10k-labels-idx1-ubyte"),
                            d.num_classes, Split::Test);
    } else if (d.format == "raw") {
        out.train = load_raw_nchw(require_file(dir / "train_images.bin"), require_file(dir / "train_labels.bin"),
                                  d.channels, d.image_size, d.image_size, d.num_classes, Split::Train);
        out.test = load_raw_nchw(require_file(dir / "test_images.bin"), require_file(dir / "test_labels.bin"), d.channels,
                                 d.image_size, d.image_size, d.num_classes, Split::Test);
    } else {
        throw ConfigError("dataset.format", "expected 'idx' or 'raw', got '" + d.format + "'");
    }
    for (const ImageDataset* ds : {&out.train, &out.test}) {
        if (ds->channels != d.channels || ds->height != d.image_size || ds->width != d.image_size) {
            throw DataError(dir.string() + ": images are " + std::to_string(ds->channels) + "x" +
                            std::to_string(ds->height) + "x" + std::to_string(ds->width) + ", config expects " +
                            std::to_string(d.channels) + "x" + std::to_string(d.image_size) + "x" +
                            std::to_string(d.image_size));
        }
    }
    out.train = subset(out.train, d.max_samples, d.subset_seed);
    out.test = subset(out.test, d.test_max_samples, d.subset_seed);
    return out;
}

void write_metrics_csv(const fs::path& path, const std::vector<CycleRecord>& cycles) {
    auto out = open_out(path);
    out << kMetricsHeader;
    for (const auto& r : cycles) out << metrics_row(r);
}

void write_timings_csv(const fs::path& path, const std::vector<CycleRecord>& cycles) {
    auto out = open_out(path);
    out << kTimingsHeader;
    for (const auto& r : cycles) out << timings_row(r);
}

RunOutputs execute_run(const RunConfig& config, const Datasets& data, const fs::path& out_dir) {
    config.validate();
    const fs::path ckpt_dir = out_dir / "checkpoints";
    const fs::path cluster_dir = out_dir / "clusters";
    fs::create_directories(ckpt_dir);
    if (config.dump_clusters) fs::create_directories(cluster_dir);
    write_json(out_dir / "config.json", to_json(config));

    auto metrics = open_out(out_dir / "metrics.csv");
    auto timings = open_out(out_dir / "timings.csv");
    metrics << kMetricsHeader << std::flush;
    timings << kTimingsHeader << std::flush;

    RunHooks hooks;
    hooks.on_cycle = [&](const CycleRecord& rec, const Network& net) {
        metrics << metrics_row(rec) << std::flush;
        timings << timings_row(rec) << std::flush;
        if (config.dump_clusters && rec.clustering) {
            write_kmeans(cluster_dir / cycle_name("cycle", rec.cycle, ".kmns"), *rec.clustering);
        }
        if (config.checkpoint_every > 0 && (rec.cycle + 1) % config.checkpoint_every == 0) {
            save_checkpoint(ckpt_dir / cycle_name("cycle", rec.cycle, ".dckp"), net,
                            checkpoint_metadata(config, rec.cycle));
        }
    };
    hooks.on_failure = [&](const CycleRecord& rec, const Network& net, const std::exception& e) {
        save_checkpoint(ckpt_dir / "failure.dckp", net, checkpoint_metadata(config, rec.cycle));
        write_json(out_dir / "failure.json", {{"cycle", rec.cycle}, {"clustered", rec.clustered}, {"error", e.what()}});
    };

    RunOutputs result{run_deepcluster(config, data.train, hooks), {}};
    save_checkpoint(ckpt_dir / "final.dckp", result.log.network, checkpoint_metadata(config, std::nullopt));
    result.probe = linear_probe(result.log.network, config.probe_layer(), data.train, data.test, config.transforms,
                                config.probe, config.seed);
    write_json(out_dir / "probe.json", probe_json(result.probe));
    return result;
}

const std::vector<std::string>& sweep_axes() {
    static const std::vector<std::string> axes{"k", "seed", "halt", "pca"};
    return axes;
}

std::vector<SweepRow> execute_sweep(const RunConfig& base, const std::string& axis, std::vector<double> values,
                                    const Datasets& data, const fs::path& out_dir) {
    if (values.empty()) throw ConfigError("values", "sweep needs at least one value");
    std::sort(values.begin(), values.end());
    if (std::adjacent_find(values.begin(), values.end()) != values.end()) {
        throw ConfigError("values", "duplicate sweep value");
    }
    // Validate every child up front so a bad value fails before any run starts.
    std::vector<RunConfig> children;
    for (double v : values) {
        RunConfig c = base;
        apply_axis(c, axis, v);
        children.push_back(c);
    }

    auto csv = open_out(out_dir / "sweep.csv");
    csv << axis << ",ia,probe_accuracy\n" << std::flush;
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const RunOutputs r = execute_run(children[i], data, out_dir / (axis + "_" + value_tag(values[i])));
        SweepRow row{values[i], r.log.cycles.empty() ? std::nullopt : r.log.cycles.front().nmi_truth,
                     r.probe.test_accuracy};
        csv << value_tag(row.value) << ',' << opt_num(row.ia) << ',' << num(row.probe_accuracy) << '\n' << std::flush;
        rows.push_back(row);
    }
    return rows;
}

std::vector<IaDistribution> execute_ia_sample(const RunConfig& config, const std::string& hyperparam,
                                              const std::vector<double>& values, std::size_t n_seeds,
                                              std::uint64_t seed_base, const Datasets& data, const fs::path& out_dir) {
    if (values.empty()) throw ConfigError("values", "need at least one value");
    if (std::find(ia_hyperparams().begin(), ia_hyperparams().end(), hyperparam) == ia_hyperparams().end()) {
        std::string names;
        for (const auto& n : ia_hyperparams()) names += (names.empty() ? "" : ", ") + n;
        throw ConfigError("hyperparam", "'" + hyperparam + "' is not one of: " + names);
    }
    for (double v : values) {
        RunConfig c = config;
        set_hyperparam(c, hyperparam, v);
    }

    auto samples = open_out(out_dir / "ia_samples.csv");
    samples << "hyperparam,value,seed,ia\n" << std::flush;
    std::vector<IaDistribution> dists;
    for (double v : values) {
        dists.push_back(sample_ia(config, hyperparam, v, data.train, n_seeds, seed_base));
        for (const auto& s : dists.back().samples) {
            samples << hyperparam << ',' << value_tag(v) << ',' << s.seed << ',' << num(s.ia) << '\n';
        }
        samples << std::flush;
    }
    if (dists.size() >= 2) dists = rank_candidates(std::move(dists));

    auto summary = open_out(out_dir / "ia_summary.csv");
    summary << "rank,hyperparam,value,median,p25,samples\n";
    json js = json::array();
    for (std::size_t i = 0; i < dists.size(); ++i) {
        const auto& d = dists[i];
        summary << i + 1 << ',' << d.hyperparam << ',' << value_tag(d.value) << ',' << num(d.median) << ','
                << num(d.p25) << ',' << d.sample_count << '\n';
        json s = json::array();
        for (const auto& x : d.samples) s.push_back({{"seed", x.seed}, {"ia", x.ia}});
        js.push_back({{"rank", i + 1},
                      {"hyperparam", d.hyperparam},
                      {"value", d.value},
                      {"median", d.median},
                      {"p25", d.p25},
                      {"samples", s}});
    }
    write_json(out_dir / "ia_summary.json", js);
    return dists;
}

ProbeResult execute_probe(const RunConfig& config, const fs::path& checkpoint, const std::string& layer,
                          const Datasets& data, const fs::path& out_dir) {
    Network net = load_checkpoint(checkpoint);
    const std::string l = layer.empty() ? config.probe_layer() : layer;
    ProbeResult r = linear_probe(net, l, data.train, data.test, config.transforms, config.probe, config.seed);
    write_json(out_dir / "probe.json", probe_json(r));
    return r;
}

void execute_export(const fs::path& run_dir, const ExportOptions& options, const fs::path& data_root,
                    const fs::path& out_dir) {
    if (options.what == "features") {
        const RunConfig config = load_run_config(run_dir / "config.json");
        const fs::path ckpt = run_dir / "checkpoints" / "final.dckp";
        if (!fs::is_regular_file(ckpt)) throw DataError("no final checkpoint in " + run_dir.string());
        Network net = load_checkpoint(ckpt);
        const Datasets data = load_datasets(config, data_root);
        const FeatureMatrix f =
            extract_features(net, data.train, config.transforms, config.extract_batch_size, options.layer);
        write_fmat(out_dir / "features.fmat", f);
        if (data.train.labels) {
            auto out = open_out(out_dir / "labels.csv");
            out << "index,label\n";
            for (std::size_t i = 0; i < data.train.labels->size(); ++i) out << i << ',' << (*data.train.labels)[i] << '\n';
        }
        if (options.csv) write_features_csv(out_dir / "features.csv", f, data.train.labels);
    } else if (options.what == "metrics") {
        std::ifstream in(run_dir / "metrics.csv");
        if (!in) throw DataError("no metrics.csv in " + run_dir.string());
        std::string line;
        std::getline(in, line);
        const auto header = split(line, ',');
        json rows = json::array();
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto cells = split(line, ',');
            if (cells.size() != header.size()) throw DataError("malformed row in metrics.csv: " + line);
            json row = json::object();
            for (std::size_t i = 0; i < cells.size(); ++i) {
                row[header[i]] = cells[i].empty() ? json(nullptr) : json(std::strtod(cells[i].c_str(), nullptr));
            }
            rows.push_back(row);
        }
        json j = {{"cycles", rows}};
        if (fs::is_regular_file(run_dir / "probe.json")) j["probe"] = read_json_file(run_dir / "probe.json");
        write_json(out_dir / "metrics.json", j);
    } else {
        throw ConfigError("what", "expected 'features' or 'metrics', got '" + options.what + "'");
    }
}

namespace {

template <typename T>
T arg(const ExperimentManifest& m, const char* key, T fallback) {
    if (!m.args.contains(key) || m.args[key].is_null()) return fallback;
    try {
        return m.args[key].get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("args.") + key, "wrong type");
    }
}

}  // namespace

void execute_manifest(const ExperimentManifest& m, const fs::path& data_root) {
    m.config.validate();
    const std::string& cmd = m.command;
    const bool is_sweep = cmd.size() > 6 && cmd.compare(cmd.size() - 6, 6, "-sweep") == 0;
    if (cmd != "run" && cmd != "probe" && cmd != "ia-sample" && cmd != "export" && !is_sweep) {
        throw ConfigError("command", "unknown command '" + cmd + "'");
    }
    if (cmd == "export") {
        const auto run = arg<std::string>(m, "run", "");
        if (run.empty()) throw ConfigError("args.run", "run directory is required");
        write_manifest(m);
        execute_export(run, {arg<std::string>(m, "what", "features"), arg<std::string>(m, "layer", ""),
                             arg<bool>(m, "csv", false)},
                       data_root, m.out_dir);
        return;
    }
    write_manifest(m);
    const Datasets data = load_datasets(m.config, data_root);
    if (cmd == "run") {
        execute_run(m.config, data, m.out_dir);
    } else if (cmd == "probe") {
        const auto ckpt = arg<std::string>(m, "checkpoint", "");
        if (ckpt.empty()) throw ConfigError("args.checkpoint", "checkpoint path is required");
        execute_probe(m.config, ckpt, arg<std::string>(m, "layer", ""), data, m.out_dir);
    } else if (cmd == "ia-sample") {
        execute_ia_sample(m.config, arg<std::string>(m, "hyperparam", ""), arg<std::vector<double>>(m, "values", {}),
                          arg<std::size_t>(m, "seeds", 20), arg<std::uint64_t>(m, "seed_base", 0), data, m.out_dir);
    } else {
        execute_sweep(m.config, cmd.substr(0, cmd.size() - 6), arg<std::vector<double>>(m, "values", {}), data,
                      m.out_dir);
    }
}

std::vector<double> parse_value_list(const std::string& text) {
    std::vector<double> out;
    for (const auto& cell : split(text, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(cell, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != cell.size()) throw ConfigError("values", "not a number: '" + cell + "'");
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError("values", "empty value list");
    return out;
}

}  // namespace dcl
