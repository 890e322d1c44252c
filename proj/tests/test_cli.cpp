#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "spherebg/cli.hpp"

using namespace spherebg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("spherebg_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }

  void write(const std::string& name, const std::string& text) const { std::ofstream(dir / name) << text; }

  void make_checkpoint() {
    ASSERT_EQ(call({"synth-data", "--out", path("data"), "--resolution", "8", "--views", "5"}).code, 0);
    write("cfg.json", R"({"steps": 4, "batch_rays": 16, "coarse_samples": 4, "fine_samples": 2,
                          "fg_widths": [8], "fg_position_levels": 2, "fg_direction_levels": 1,
                          "bg_widths": [8], "bg_levels": 2})");
    ASSERT_EQ(call({"train", "--data", path("data"), "--out", path("ck.bin"), "--config", path("cfg.json"), "--quiet"})
                  .code,
              0);
  }

  fs::path dir;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_F(CliTest, HelpAndUsageErrors) {
  EXPECT_EQ(call({"--help"}).code, 0);
  const auto help = call({"render", "--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("--checkpoint"), std::string::npos);
  EXPECT_EQ(call({}).code, 1);
  EXPECT_EQ(call({"frobnicate"}).code, 1);
  EXPECT_EQ(call({"extract-mesh", "--out", path("m.obj"), "--resolution", "1"}).code, 1);
}

TEST_F(CliTest, MissingCheckpointNamesTheFlag) {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {"render", "--out", path("r")},
           {"render", "--checkpoint", path("nope.bin"), "--out", path("r")},
           {"extract-mesh", "--checkpoint", path("nope.bin"), "--out", path("m.obj")}}) {
    const auto r = call(args);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("--checkpoint"), std::string::npos) << r.err;
  }
}

TEST_F(CliTest, UsageErrorsLeaveNoFiles) {
  ASSERT_EQ(call({"synth-data", "--out", path("data"), "--resolution", "4", "--views", "5"}).code, 0);
  EXPECT_EQ(call({"train", "--data", path("data"), "--out", path("missing/ck.bin")}).code, 1);
  EXPECT_FALSE(fs::exists(dir / "missing"));
  write("bad.json", R"({"near": 2, "far": 1})");
  const auto r = call({"train", "--data", path("data"), "--out", path("ck.bin"), "--config", path("bad.json")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("near"), std::string::npos) << r.err;
  write("typo.json", R"({"lambda_bgg_final": 1})");
  EXPECT_EQ(call({"train", "--data", path("data"), "--out", path("ck.bin"), "--config", path("typo.json")}).code, 1);
  EXPECT_FALSE(fs::exists(dir / "ck.bin"));
  for (const auto& e : fs::recursive_directory_iterator(dir)) EXPECT_NE(e.path().extension(), ".tmp") << e.path();
}

TEST_F(CliTest, Gradcheck) {
  const auto r = call({"gradcheck"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("355"), std::string::npos) << r.out;
  EXPECT_EQ(call({"gradcheck", "--tolerance", "1e-300"}).code, 2);
}

TEST_F(CliTest, RuntimeErrorsExitTwo) {
  make_checkpoint();
  ASSERT_EQ(call({"render", "--checkpoint", path("ck.bin"), "--out", path("r"), "--resolution", "6"}).code, 0);
  ASSERT_EQ(call({"render", "--checkpoint", path("ck.bin"), "--out", path("r8"), "--data", path("data"), "--view", "1"})
                .code,
            0);
  const auto r = call({"composite", "--foreground", path("r/foreground.png"), "--alpha", path("r/alpha.png"),
                       "--background", path("r8/background.png"), "--out", path("c.png")});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir / "c.png"));
  EXPECT_EQ(call({"render", "--checkpoint", path("ck.bin"), "--out", path("r9"), "--data", path("data"), "--view", "7"})
                .code,
            2);
  EXPECT_EQ(call({"render", "--checkpoint", path("data/dataset.json"), "--out", path("r10")}).code, 2);
  EXPECT_EQ(call({"render", "--checkpoint", path("ck.bin"), "--out", path("r11"), "--data", path("data")}).code, 1);
}

TEST_F(CliTest, PipelineIsByteIdenticalAcrossRuns) {
  auto run_all = [&](const std::string& tag) {
    const std::string d = path(tag);
    fs::create_directories(d);
    write("cfg.json", R"({"steps": 6, "batch_rays": 16, "coarse_samples": 4, "fine_samples": 2, "log_every": 2,
                          "fg_widths": [8], "fg_position_levels": 2, "fg_direction_levels": 1,
                          "bg_widths": [8], "bg_levels": 2})");
    ASSERT_EQ(call({"synth-data", "--out", d + "/data", "--resolution", "8", "--views", "5", "--seed", "3"}).code, 0);
    ASSERT_EQ(call({"train", "--data", d + "/data", "--out", d + "/ck.bin", "--config", path("cfg.json"), "--log",
                    d + "/loss.csv", "--quiet", "--seed", "3"})
                  .code,
              0);
    ASSERT_EQ(call({"render", "--checkpoint", d + "/ck.bin", "--out", d + "/r", "--azimuth", "30", "--resolution", "8"}).code, 0);
    ASSERT_EQ(call({"composite", "--foreground", d + "/r/foreground.pfm", "--alpha", d + "/r/alpha.pfm",
                    "--background", d + "/data/view_000.png", "--out", d + "/comp.png"})
                  .code,
              0);
    ASSERT_EQ(call({"extract-mesh", "--checkpoint", d + "/ck.bin", "--resolution", "12", "--threshold", "0.69",
                    "--out", d + "/m.obj"})
                  .code,
              0);
    const auto ev = call({"evaluate", "--checkpoint", d + "/ck.bin", "--data", d + "/data", "--out", d + "/ev.json"});
    ASSERT_EQ(ev.code, 0);
    const auto j = nlohmann::json::parse(slurp(d + "/ev.json"));
    EXPECT_TRUE(j.contains("psnr") && j.contains("mask_iou") && j.contains("binarization_rate")) << j.dump();
  };
  run_all("a");
  run_all("b");
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path other = dir / "b" / fs::relative(e.path(), dir / "a");
    ASSERT_TRUE(fs::exists(other)) << other;
    EXPECT_EQ(slurp(e.path()), slurp(other)) << e.path();
    ++compared;
  }
  EXPECT_GE(compared, 20u);
  for (const char* f : {"r/full.png", "r/foreground.png", "r/foreground.pfm", "r/background.png", "r/alpha.png",
                        "r/alpha.pfm", "r/depth.pfm", "loss.csv", "m.obj", "comp.png"})
    EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
  EXPECT_EQ(slurp(dir / "a/loss.csv").rfind("step,recon,l_fg,l_bg,lambda_fg,lambda_bg,total\n", 0), 0u);
}

TEST_F(CliTest, InstalledBinaryExitCodes) {
  auto status = [](const std::string& args) {
    const int s = std::system((std::string(SPHEREBG_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(status("--help"), 0);
  EXPECT_EQ(status("render"), 1);
  EXPECT_EQ(status("gradcheck --tolerance 1e-300"), 2);
}
