#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <json.hpp>

#include "support/synthetic.hpp"

namespace fs = std::filesystem;
using dcl::fixture::TempDir;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// One synthetic raw dataset shared by every CLI test.
class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = new TempDir("cli_data");
        dcl::fixture::write_raw_dataset(root_->path(), "synth", dcl::fixture::banded_dataset(120, 4, 28, 31),
                                        dcl::fixture::banded_dataset(60, 4, 28, 32));
        std::ofstream cfg(*root_ / "config.json");
        cfg << R"({"format_version": 1,
                   "dataset": {"name": "synth", "format": "raw", "num_classes": 4},
                   "training": {"num_cycles": 2, "batch_size": 32},
                   "clustering": {"num_clusters": 4},
                   "probe": {"epochs": 2}})";
    }
    static void TearDownTestSuite() {
        delete root_;
        root_ = nullptr;
    }

    int dcl(const std::string& args) const {
        const std::string cmd = "DCL_DATA_ROOT='" + root_->path().string() + "' " + DCL_CLI_PATH + " " + args +
                                " > '" + (work_ / "log.txt").string() + "' 2>&1";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }
    std::string config() const { return "--config '" + (*root_ / "config.json").string() + "'"; }
    std::string log() const { return slurp(work_ / "log.txt"); }
    fs::path dir(const std::string& name) const { return work_ / name; }

    static TempDir* root_;
    TempDir work_{"cli_work"};
};

TempDir* CliTest::root_ = nullptr;

}  // namespace

TEST_F(CliTest, RunWritesEveryOutput) {
    ASSERT_EQ(dcl("run " + config() + " --out " + dir("r").string()), 0) << log();
    for (const char* f : {"manifest.json", "config.json", "metrics.csv", "timings.csv", "probe.json",
                          "checkpoints/final.dckp"}) {
        EXPECT_TRUE(fs::exists(dir("r") / f)) << f;
    }
    const auto m = nlohmann::json::parse(slurp(dir("r") / "manifest.json"));
    EXPECT_EQ(m["command"], "run");
    EXPECT_EQ(m["format_version"], 1);
    const std::string metrics = slurp(dir("r") / "metrics.csv");
    EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 3);
}

TEST_F(CliTest, ExitCodes) {
    EXPECT_EQ(dcl("--help"), 0);
    EXPECT_EQ(dcl("run --bogus"), 1);
    EXPECT_EQ(dcl("run " + config() + " --clusters 1 --out " + dir("k1").string()), 1);
    EXPECT_NE(log().find("constant pseudo-labels"), std::string::npos) << log();
    EXPECT_EQ(dcl("run " + config() + " --set dataset.name=absent --out " + dir("nodata").string()), 2);
    EXPECT_NE(log().find("not found"), std::string::npos) << log();
}

TEST_F(CliTest, ManifestComesFirst) {
    // The dataset is missing, so the run fails after the manifest is written.
    EXPECT_EQ(dcl("run " + config() + " --set dataset.name=absent --out " + dir("m").string()), 2);
    EXPECT_TRUE(fs::exists(dir("m") / "manifest.json"));
    EXPECT_FALSE(fs::exists(dir("m") / "metrics.csv"));
}

TEST_F(CliTest, RerunReproducesMetrics) {
    ASSERT_EQ(dcl("run " + config() + " --seed 4 --out " + dir("a").string()), 0) << log();
    ASSERT_EQ(dcl("rerun " + (dir("a") / "manifest.json").string() + " --out " + dir("b").string()), 0) << log();
    EXPECT_EQ(slurp(dir("a") / "metrics.csv"), slurp(dir("b") / "metrics.csv"));
    EXPECT_EQ(slurp(dir("a") / "checkpoints/final.dckp"), slurp(dir("b") / "checkpoints/final.dckp"));
}

TEST_F(CliTest, SweepSortsValuesAndMatchesSingleRun) {
    ASSERT_EQ(dcl("sweep " + config() + " --axis seed --values 7,2 --out " + dir("s").string()), 0) << log();
    const std::string csv = slurp(dir("s") / "sweep.csv");
    EXPECT_EQ(csv.rfind("seed,ia,probe_accuracy\n2,", 0), 0u) << csv;
    EXPECT_NE(csv.find("\n7,"), std::string::npos);
    ASSERT_EQ(dcl("run " + config() + " --seed 2 --out " + dir("single").string()), 0) << log();
    EXPECT_EQ(slurp(dir("s") / "seed_2" / "metrics.csv"), slurp(dir("single") / "metrics.csv"));
    EXPECT_EQ(dcl("sweep " + config() + " --axis seed --values 1,1 --out " + dir("dup").string()), 1);
    EXPECT_EQ(dcl("sweep " + config() + " --axis depth --values 1 --out " + dir("ax").string()), 1);
}

TEST_F(CliTest, IaSampleRanksCandidates) {
    ASSERT_EQ(dcl("ia-sample " + config() + " --hyperparam num_clusters --values 2,4 --seeds 3 --out " +
                  dir("ia").string()),
              0)
        << log();
    const auto j = nlohmann::json::parse(slurp(dir("ia") / "ia_summary.json"));
    ASSERT_EQ(j.size(), 2u);
    EXPECT_EQ(j[0]["rank"], 1);
    EXPECT_GE(j[0]["median"].get<double>(), j[1]["median"].get<double>());
    const std::string samples = slurp(dir("ia") / "ia_samples.csv");
    EXPECT_EQ(std::count(samples.begin(), samples.end(), '\n'), 7);
    EXPECT_EQ(dcl("ia-sample " + config() + " --hyperparam learning_rate --values 1 --out " + dir("bad").string()), 1);
}

TEST_F(CliTest, ProbeAndExport) {
    ASSERT_EQ(dcl("run " + config() + " --out " + dir("r").string()), 0) << log();
    const auto ckpt = (dir("r") / "checkpoints/final.dckp").string();
    ASSERT_EQ(dcl("probe --checkpoint " + ckpt + " --layer conv1 --out " + dir("p").string()), 0) << log();
    const auto probe = nlohmann::json::parse(slurp(dir("p") / "probe.json"));
    EXPECT_EQ(probe["layer"], "conv1");

    ASSERT_EQ(dcl("export --run " + dir("r").string() + " --csv"), 0) << log();
    EXPECT_TRUE(fs::exists(dir("r") / "export/features.fmat"));
    EXPECT_TRUE(fs::exists(dir("r") / "export/features.csv"));
    const std::string labels = slurp(dir("r") / "export/labels.csv");
    EXPECT_EQ(std::count(labels.begin(), labels.end(), '\n'), 121);

    ASSERT_EQ(dcl("export --run " + dir("r").string() + " --what metrics --out " + dir("e").string()), 0) << log();
    const auto metrics = nlohmann::json::parse(slurp(dir("e") / "metrics.json"));
    EXPECT_FALSE(metrics.empty());
    EXPECT_EQ(dcl("export --run " + dir("r").string() + " --what weights"), 1);
}
