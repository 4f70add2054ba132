#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dcl/config.hpp"
#include "dcl/error.hpp"
#include "dcl/experiment.hpp"
#include "dcl/pipeline.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

// Settings shared by every command that builds a RunConfig.
struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> cycles;
    std::optional<std::size_t> clusters;
    std::optional<std::size_t> max_samples;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run config (defaults apply when omitted)");
        cmd->add_option("--set", overrides, "Override a config value, e.g. --set training.num_cycles=10");
        cmd->add_option("--seed", seed, "Shortcut for --set seed=N");
        cmd->add_option("--cycles", cycles, "Shortcut for --set training.num_cycles=N");
        cmd->add_option("--clusters", clusters, "Shortcut for --set clustering.num_clusters=N");
        cmd->add_option("--max-samples", max_samples, "Shortcut for --set dataset.max_samples=N");
    }

    dcl::RunConfig resolve(dcl::RunConfig base) const {
        dcl::RunConfig c = config_path.empty() ? base : dcl::load_run_config(config_path);
        if (seed) c.seed = *seed;
        if (cycles) c.num_cycles = *cycles;
        if (clusters) c.num_clusters = *clusters;
        if (max_samples) c.dataset.max_samples = *max_samples;
        for (const auto& o : overrides) dcl::apply_override(c, o);
        c.validate();
        return c;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DeepCluster analysis lab"};
    app.require_subcommand(1);

    ConfigArgs cfg;
    std::string out;

    auto* run = app.add_subcommand("run", "Train with DeepCluster, then linear-probe the result");
    cfg.attach(run);
    run->add_option("--out", out, "Run directory")->required();

    std::string axis, values;
    auto* sweep = app.add_subcommand("sweep", "One run per value of a single setting");
    cfg.attach(sweep);
    sweep->add_option("--axis", axis, "k, seed, halt or pca")->required();
    sweep->add_option("--values", values, "Comma-separated values")->required();
    sweep->add_option("--out", out, "Sweep directory")->required();

    std::string hyperparam;
    std::size_t n_seeds = 20;
    std::uint64_t seed_base = 0;
    auto* ia = app.add_subcommand("ia-sample", "Initial-alignment distributions over seeds");
    cfg.attach(ia);
    ia->add_option("--hyperparam", hyperparam, "num_clusters, pca_components, use_batchnorm, sobel or whitening_epsilon")
        ->required();
    ia->add_option("--values", values, "Comma-separated candidate values")->required();
    ia->add_option("--seeds", n_seeds, "Seeds per value")->capture_default_str();
    ia->add_option("--seed-base", seed_base, "First seed")->capture_default_str();
    ia->add_option("--out", out, "Output directory")->required();

    std::string checkpoint, layer;
    auto* probe = app.add_subcommand("probe", "Linear probe on a saved network");
    cfg.attach(probe);
    probe->add_option("--checkpoint", checkpoint, "DCKP checkpoint")->required();
    probe->add_option("--layer", layer, "Block to probe (conv1, conv2, ...)");
    probe->add_option("--out", out, "Output directory")->required();

    std::string run_dir, what = "features";
    bool csv = false;
    auto* exp = app.add_subcommand("export", "Export features or metrics from a run directory");
    exp->add_option("--run", run_dir, "Run directory")->required();
    exp->add_option("--what", what, "features or metrics")->capture_default_str();
    exp->add_option("--layer", layer, "Block whose output is exported (default: topmost)");
    exp->add_flag("--csv", csv, "Also write features.csv");
    exp->add_option("--out", out, "Output directory (default: <run>/export)");

    std::string manifest_path;
    auto* rerun = app.add_subcommand("rerun", "Execute a saved manifest again");
    rerun->add_option("manifest", manifest_path, "manifest.json")->required();
    rerun->add_option("--out", out, "Output directory (default: the manifest's)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        dcl::ExperimentManifest m;
        m.out_dir = out;
        if (*run) {
            m.command = "run";
            m.config = cfg.resolve({});
        } else if (*sweep) {
            m.command = axis + "-sweep";
            m.config = cfg.resolve({});
            const auto& axes = dcl::sweep_axes();
            if (std::find(axes.begin(), axes.end(), axis) == axes.end()) {
                throw dcl::ConfigError("axis", "expected k, seed, halt or pca, got '" + axis + "'");
            }
            m.args = {{"values", dcl::parse_value_list(values)}};
        } else if (*ia) {
            m.command = "ia-sample";
            m.config = cfg.resolve({});
            m.args = {{"hyperparam", hyperparam},
                      {"values", dcl::parse_value_list(values)},
                      {"seeds", n_seeds},
                      {"seed_base", seed_base}};
        } else if (*probe) {
            m.command = "probe";
            // Without --config, probe under the settings the network was trained with.
            nlohmann::json meta;
            dcl::load_checkpoint(checkpoint, &meta);
            dcl::RunConfig base;
            if (meta.contains("config")) base = dcl::run_config_from_json(meta["config"]);
            m.config = cfg.resolve(base);
            m.args = {{"checkpoint", checkpoint}, {"layer", layer}};
        } else if (*exp) {
            m.command = "export";
            m.config = dcl::load_run_config(std::filesystem::path(run_dir) / "config.json");
            if (out.empty()) m.out_dir = std::filesystem::path(run_dir) / "export";
            m.args = {{"run", run_dir}, {"what", what}, {"layer", layer}, {"csv", csv}};
        } else {
            m = dcl::manifest_from_json(dcl::read_json_file(manifest_path));
            if (!out.empty()) m.out_dir = out;
        }
        dcl::execute_manifest(m, dcl::data_root_from_env());
        std::cout << m.command << " finished: " << m.out_dir.string() << "\n";
        return 0;
    } catch (const dcl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
