#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "hgpose/cli.hpp"
#include "oracles.hpp"
#include "rigged.hpp"

using namespace hgpose;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "hgpose");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct RiggedScene {
  testutil::TempDir tmp;
  fs::path scene;
  fs::path ckpt;
  RiggedScene() : scene(tmp / "fix"), ckpt(tmp / "rigged.hgp") {
    EXPECT_EQ(cli({"fixture", "--out", scene.string(), "--sequences", "2", "--frames", "4", "--height", "32", "--width",
                   "40"})
                  .code,
              0);
    const Pose pose = rigged::representable_pose();
    rigged::flatten_poses(scene, pose);
    save_checkpoint(rigged::constant_pose_model(tiny_model_config(NetworkVariant::Sum), pose), ckpt,
                    {{"preprocess", to_json(PreprocessConfig{32, 32, CropMode::TestCenter})}});
  }
};

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"frobnicate"}).code, 1);
  EXPECT_EQ(cli({"eval", "--scene-dir", "x"}).code, 1);
  EXPECT_EQ(cli({"train", "--scene-dir", "x", "--out", "y", "--variant", "product"}).code, 1);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, MissingSceneDirectoryExitsTwo) {
  testutil::TempDir tmp;
  const Result r = cli({"eval", "--scene-dir", (tmp / "absent").string(), "--checkpoint", (tmp / "c.hgp").string(),
                        "--out", (tmp / "o").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, InvalidConfigExitsOne) {
  testutil::TempDir tmp;
  std::ofstream(tmp / "bad.json") << R"({"train": {"batch_size": 0}})";
  RiggedScene s;
  EXPECT_EQ(cli({"train", "--scene-dir", s.scene.string(), "--out", (tmp / "run").string(), "--config",
                 (tmp / "bad.json").string()})
                .code,
            1);
}

TEST(Cli, ShippedConfigsLoad) {
  const std::filesystem::path dir = HGPOSE_SOURCE_DIR "/configs";
  const auto sum = load_run_config(dir / "hourglasssum_pose.json");
  const auto concat = load_run_config(dir / "hourglass_pose.json");
  EXPECT_EQ(sum.model.variant, NetworkVariant::Sum);
  EXPECT_EQ(concat.model.variant, NetworkVariant::Concat);
  const ModelConfig defaults;
  for (const auto* c : {&sum, &concat}) {
    EXPECT_EQ(c->model.encoder_channels, defaults.encoder_channels);
    EXPECT_EQ(c->model.encoder_block_counts, defaults.encoder_block_counts);
    EXPECT_EQ(c->model.decoder_channels, defaults.decoder_channels);
    EXPECT_EQ(total_epochs(c->train), 120u);
    EXPECT_EQ(c->train.batch_size, 40u);
    EXPECT_EQ(c->preprocess.crop, 224u);
  }
  EXPECT_NO_THROW(load_run_config(dir / "tiny.json"));
}

TEST(Cli, EvalOfRiggedCheckpointGivesZeroMedians) {
  RiggedScene s;
  const fs::path out = s.tmp / "eval";
  const Result r = cli({"eval", "--scene-dir", s.scene.string(), "--checkpoint", s.ckpt.string(), "--out", out.string(),
                        "--dump-predictions"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto [rows, avg] = read_summary_csv(out / "fix_summary.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].n_frames, 4u);
  EXPECT_EQ(rows[0].median_t_m, 0.0);
  EXPECT_LT(rows[0].median_q_deg, 1e-6);
  EXPECT_EQ(avg.median_t_m, 0.0);
  EXPECT_TRUE(fs::exists(out / "fix_predictions.csv"));
  const std::string first = slurp(out / "fix_errors.csv");
  ASSERT_EQ(cli({"eval", "--scene-dir", s.scene.string(), "--checkpoint", s.ckpt.string(), "--out", out.string()}).code, 0);
  EXPECT_EQ(slurp(out / "fix_errors.csv"), first);
}

TEST(Cli, ZeroQuaternionOutputIsNumericalAbort) {
  RiggedScene s;
  Pose zero = rigged::representable_pose();
  zero.q = {0, 0, 0, 0};
  save_checkpoint(rigged::constant_pose_model(tiny_model_config(NetworkVariant::Sum), zero), s.tmp / "zero.hgp",
                  {{"preprocess", to_json(PreprocessConfig{32, 32, CropMode::TestCenter})}});
  const Result r = cli({"eval", "--scene-dir", s.scene.string(), "--checkpoint", (s.tmp / "zero.hgp").string(), "--out",
                        (s.tmp / "o").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("seq-02"), std::string::npos);
}

TEST(Cli, ReportAverageEqualsSummarize) {
  testutil::TempDir tmp;
  std::mt19937_64 rng(9);
  std::gamma_distribution<double> g(2.0, 0.2);
  std::vector<std::string> args{"report", "--out", (tmp / "rep").string(), "--inputs"};
  std::vector<FrameErrors> reread;
  for (int s = 0; s < 7; ++s) {
    FrameErrors e;
    e.scene = "scene" + std::to_string(s);
    for (int i = 0; i < 40 + s; ++i) e.push("seq-03", i, g(rng), 30 * g(rng));
    const fs::path p = tmp / (e.scene + "_errors.csv");
    write_errors_csv(p, e);
    reread.push_back(read_errors_csv(p));
    args.push_back(p.string());
  }
  const Result r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const EvalSummary expect = summarize(reread);
  const auto [rows, avg] = read_summary_csv(tmp / "rep/summary.csv");
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(format_g6(avg.median_t_m), format_g6(expect.average_t_m));
  EXPECT_EQ(format_g6(avg.median_q_deg), format_g6(expect.average_q_deg));
  EXPECT_TRUE(fs::exists(tmp / "rep/scene3_q_hist.csv"));
  EXPECT_TRUE(fs::exists(tmp / "rep/scene3_t_cdf.csv"));

  // the summary file itself is accepted as input
  const Result again = cli({"report", "--out", (tmp / "rep2").string(), "--inputs", (tmp / "rep/summary.csv").string()});
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(read_summary_csv(tmp / "rep2/summary.csv").second.median_t_m, avg.median_t_m);

  EXPECT_EQ(cli({"report", "--out", (tmp / "rep3").string(), "--inputs", (tmp / "scene0_errors.csv").string(),
                 "--t-edges", "1:0:1"})
                .code,
            1);
}

TEST(Cli, SelftestPasses) {
  const Result r = cli({"selftest", "--gradient-samples", "10"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}
