#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "cogload/detail/text.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "cogload_cli_test";

const char* kSmallConfig = R"({
  "synth": {
    "sessions": 2,
    "drift_period_s": 12,
    "schedule": [
      {"level": 0, "duration_s": 12}, {"level": 1, "duration_s": 12}, {"level": 2, "duration_s": 12},
      {"level": 2, "duration_s": 12}, {"level": 0, "duration_s": 12}, {"level": 1, "duration_s": 12}
    ]
  },
  "window": {"length": 8, "stride": 4},
  "selector": {"k": 6, "extra_trees": {"n_trees": 10}},
  "train": {"epochs": 3}
})";

int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + COGLOAD_CLI + " -q " + args + " > " + (kRoot / "stdout.txt").string() +
                            " 2> " + (kRoot / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string small_config() {
    const auto p = kRoot / "small.json";
    if (!fs::exists(p)) cogload::detail::write_file_atomic(p, kSmallConfig);
    return "-c " + p.string();
}

std::string out(const std::string& name) {
    const auto p = kRoot / name;
    fs::remove_all(p);
    return p.string();
}

}  // namespace

TEST(Cli, PipelineWritesAllArtifacts) {
    fs::create_directories(kRoot);
    const auto dir = out("pipeline");
    ASSERT_EQ(run("pipeline " + small_config() + " -o " + dir), 0);
    for (const char* f : {"model.ckpt", "model.json", "ranking.csv", "loss_history.csv", "report.txt", "report.csv",
                          "report.json", "confusion_extra_trees.csv", "confusion_extra_trees.svg", "correlation.csv",
                          "correlation.svg", "manifest.json"})
        EXPECT_TRUE(fs::exists(fs::path(dir) / f)) << f;
    const auto manifest = nlohmann::json::parse(cogload::detail::read_file(fs::path(dir) / "manifest.json"));
    EXPECT_EQ(manifest["command"], "pipeline");
    EXPECT_EQ(manifest["config"]["train"]["epochs"], 3);
    EXPECT_TRUE(manifest["timings_s"].contains("train:extra_trees"));
    EXPECT_NE(cogload::detail::read_file(kRoot / "stdout.txt").find("Extra trees"), std::string::npos);
}

TEST(Cli, StagedCommandsChain) {
    fs::create_directories(kRoot);
    const auto raw = out("raw"), fused = out("fused"), sel = out("select"), model = out("model"), ev = out("eval");
    ASSERT_EQ(run("synth " + small_config() + " -o " + raw), 0);
    EXPECT_TRUE(fs::exists(fs::path(raw) / "session_001" / "driving.csv"));
    ASSERT_EQ(run("fuse " + small_config() + " --set data.source=streams --set data.dir=" + raw + " -o " + fused), 0);
    EXPECT_TRUE(fs::exists(fs::path(fused) / "fused" / "session_000.csv"));
    const std::string data = " --set data.source=fused --set data.dir=" + fused + "/fused";
    ASSERT_EQ(run("select " + small_config() + data + " --set selector.method=anova -o " + sel), 0);
    EXPECT_TRUE(fs::exists(fs::path(sel) / "ranking.csv"));
    EXPECT_TRUE(fs::exists(fs::path(sel) / "selection.json"));
    ASSERT_EQ(run("train " + small_config() + data + " -o " + model), 0);
    ASSERT_EQ(run("eval " + small_config() + data + " -m " + model + " -o " + ev), 0);
    EXPECT_TRUE(fs::exists(fs::path(ev) / "report.json"));
}

TEST(Cli, OutputDirectoryFromEnvironment) {
    fs::create_directories(kRoot);
    const auto dir = out("from_env");
    ASSERT_EQ(run("synth " + small_config(), "COGLOAD_OUT_DIR=" + dir), 0);
    EXPECT_TRUE(fs::exists(fs::path(dir) / "synth_manifest.json"));
}

TEST(Cli, ExitCodes) {
    fs::create_directories(kRoot);
    EXPECT_EQ(run("--help"), 0);
    EXPECT_EQ(run("pipeline --no-such-flag"), 1);
    EXPECT_EQ(run("pipeline " + small_config() + " --set train.epochz=3 -o " + out("e1")), 1);
    EXPECT_EQ(run("pipeline " + small_config() + " --set data.source=streams --set data.dir=" + (kRoot / "nowhere").string() +
                  " -o " + out("e2")),
              2);
    EXPECT_NE(cogload::detail::read_file(kRoot / "stderr.txt").find("acquire"), std::string::npos);
    EXPECT_EQ(run("pipeline " + small_config() + " --set train.lr=1e307 -o " + out("e3")), 3);
}

TEST(Cli, CompareReportsPartialFailure) {
    fs::create_directories(kRoot);
    const auto dir = out("compare");
    EXPECT_EQ(run("compare-selectors " + small_config() + " --set selector.variance_tau=1e9 -o " + dir), 4);
    const auto csv = cogload::detail::read_file(fs::path(dir) / "report.csv");
    EXPECT_EQ(csv.find("variance_threshold"), std::string::npos);
    EXPECT_NE(csv.find("extra_trees"), std::string::npos);
    const auto manifest = nlohmann::json::parse(cogload::detail::read_file(fs::path(dir) / "manifest.json"));
    ASSERT_EQ(manifest["failures"].size(), 1u);
    EXPECT_EQ(manifest["failures"][0]["selector"], "variance_threshold");
}
