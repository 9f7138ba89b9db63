#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "activemark/bytes.hpp"
#include "activemark/io.hpp"
#include "support.hpp"

namespace activemark {
namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string str(const std::filesystem::path& p) { return p.string(); }

TEST(Cli, Threshold) {
  auto r = run({"threshold", "--n", "32", "--r", "0.5", "--eps", "1e-4"});
  EXPECT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_EQ(r.out, "tau=5\n");
  EXPECT_EQ(run({"threshold", "--n", "32", "--eps", "1e-10"}).out, "tau=none\n");
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(run({"threshold", "--n", "abc"}).code, cli::kUsage);
  EXPECT_EQ(run({"threshold", "--r", "2"}).code, cli::kUsage);
  EXPECT_EQ(run({"--help"}).code, cli::kOk);
}

TEST(Cli, MissingFilesAndBadConfigs) {
  testing::TempDir dir;
  EXPECT_EQ(run({"profile", "--model", str(dir / "nope.ckpt")}).code, cli::kIoError);
  write_file_atomic(dir / "bad.toml", "steps = \n");
  EXPECT_EQ(run({"threshold", "--config", str(dir / "bad.toml")}).code, cli::kBadConfig);
  write_file_atomic(dir / "junk.ckpt", "AMCK");
  EXPECT_EQ(run({"profile", "--model", str(dir / "junk.ckpt")}).code, cli::kIntegrity);
}

TEST(Cli, ConfigPrecedence) {
  testing::TempDir dir;
  write_file_atomic(dir / "c.toml", "[threshold]\nn = 4\neps = 0.5\n");
  auto from_config = run({"threshold", "--config", str(dir / "c.toml")});
  EXPECT_EQ(from_config.out, "tau=1\n");
  EXPECT_NE(from_config.err.find("n=4 (config)"), std::string::npos) << from_config.err;
  auto flag_wins = run({"threshold", "--config", str(dir / "c.toml"), "--n", "32", "--eps", "1e-4"});
  EXPECT_EQ(flag_wins.out, "tau=5\n");
  EXPECT_NE(flag_wins.err.find("n=32 (flag)"), std::string::npos);
  write_file_atomic(dir / "c.json", R"({"threshold": {"n": 4, "eps": 0.5}})");
  EXPECT_EQ(run({"threshold", "--config", str(dir / "c.json")}).out, "tau=1\n");
}

TEST(Cli, GenModelWritesProfileAndHonoursSplit) {
  testing::TempDir dir;
  auto r = run({"gen-model", "--seed", "3", "--split", "2", "--profile-images", "8", "--out", str(dir.path())});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  auto ck = load_checkpoint(dir / "model.ckpt");
  EXPECT_EQ(ck.model.split(), 2u);
  EXPECT_EQ(ck.meta.seed, 3u);
  const std::string csv = read_file(dir / "profile.csv");
  EXPECT_EQ(csv.substr(0, 16), "block,mean_topk\n");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Cli, ShortEmbedIsByteReproducible) {
  testing::TempDir a, b;
  for (auto* dir : {&a, &b}) {
    ASSERT_EQ(run({"gen-model", "--seed", "5", "--split", "3", "--profile-images", "4", "--out", str(dir->path())}).code,
              cli::kOk);
    auto r = run({"embed", "--seed", "5", "--model", str(*dir / "model.ckpt"), "--steps", "10", "--N", "8", "--out",
                  str(dir->path())});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
  }
  for (const char* f : {"model.ckpt", "marked.ckpt", "key.amk", "history.csv", "profile.csv"})
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
}

// One full desk-scale embedding shared by the verification tests below.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir;
    auto g = run({"gen-model", "--seed", "7", "--split", "3", "--profile-images", "16", "--out", str(dir_->path())});
    ASSERT_EQ(g.code, cli::kOk) << g.err;
    auto e = run({"embed", "--seed", "7", "--model", str(*dir_ / "model.ckpt"), "--out", str(dir_->path())});
    ASSERT_EQ(e.code, cli::kOk) << e.err;
    embed_out_ = new std::string(e.out);
  }
  static void TearDownTestSuite() {
    delete dir_;
    delete embed_out_;
  }
  static std::filesystem::path path(const std::string& name) { return *dir_ / name; }
  static testing::TempDir* dir_;
  static std::string* embed_out_;
};

testing::TempDir* CliPipeline::dir_ = nullptr;
std::string* CliPipeline::embed_out_ = nullptr;

TEST_F(CliPipeline, MarkedModelVerifiesAsWatermarked) {
  auto r = run({"verify", "--model", str(path("marked.ckpt")), "--key", str(path("key.amk")), "--tau", "0", "--out",
                str(path("v_marked"))});
  EXPECT_EQ(r.code, cli::kOk) << r.out << r.err;
  auto report = load_report(path("v_marked") / "report.json");
  EXPECT_EQ(report.verdict, Verdict::watermarked);
  EXPECT_GE(static_cast<double>(report.detection_rate) / static_cast<double>(report.N), 0.9) << *embed_out_;
  EXPECT_TRUE(std::filesystem::exists(path("v_marked") / "distances.csv"));
  EXPECT_TRUE(std::filesystem::exists(path("v_marked") / "curve.csv"));

  auto summary = run({"report", "--report", str(path("v_marked") / "report.json")});
  EXPECT_EQ(summary.code, cli::kOk);
  EXPECT_NE(summary.out.find("verdict: watermarked"), std::string::npos);
}

TEST_F(CliPipeline, IndependentModelVerifiesAsIndependent) {
  ASSERT_EQ(run({"perturb", "--seed", "99", "--model", str(path("model.ckpt")), "--kind", "reinit", "--name", "indep",
                 "--out", str(path("suspects"))})
                .code,
            cli::kOk);
  auto r = run({"verify", "--model", str(path("suspects") / "indep.ckpt"), "--key", str(path("key.amk")), "--tau", "0",
                "--out", str(path("v_indep"))});
  EXPECT_EQ(r.code, cli::kIndependent) << r.out << r.err;
  EXPECT_EQ(load_report(path("v_indep") / "report.json").verdict, Verdict::independent);
}

TEST_F(CliPipeline, IncompatibleSuspectExitsWithThree) {
  ASSERT_EQ(run({"gen-model", "--seed", "1", "--width", "16", "--heads", "4", "--split", "2", "--profile-images", "4",
                 "--out", str(path("narrow"))})
                .code,
            cli::kOk);
  auto r = run({"verify", "--model", str(path("narrow") / "model.ckpt"), "--key", str(path("key.amk")), "--out",
                str(path("v_narrow"))});
  EXPECT_EQ(r.code, cli::kIncompatible) << r.out << r.err;
  auto report = load_report(path("v_narrow") / "report.json");
  EXPECT_TRUE(report.incompatible);
  EXPECT_EQ(report.verdict, Verdict::independent);
}

TEST_F(CliPipeline, PrunedCopyThenBounds) {
  ASSERT_EQ(run({"perturb", "--model", str(path("marked.ckpt")), "--kind", "prune_l1", "--fraction", "0.2", "--name",
                 "pruned", "--out", str(path("omega"))})
                .code,
            cli::kOk);
  for (int s = 0; s < 3; ++s) {
    ASSERT_EQ(run({"perturb", "--seed", std::to_string(200 + s), "--model", str(path("model.ckpt")), "--kind",
                   "reinit", "--name", "indep" + std::to_string(s), "--out", str(path("xi"))})
                  .code,
              cli::kOk);
  }
  auto manifest = decode_manifest(read_file(path("xi") / "manifest.json"));
  EXPECT_EQ(manifest.size(), 3u);

  auto b = run({"bounds", "--key", str(path("key.amk")), "--omega", str(path("omega") / "manifest.json"), "--xi",
                str(path("xi") / "manifest.json"), "--out", str(path("b"))});
  ASSERT_EQ(b.code, cli::kOk) << b.err;
  auto j = load_json(path("b") / "bounds.json");
  EXPECT_TRUE(j.contains("bit_homogeneity"));
  EXPECT_GE(j["p_omega"].get<double>(), 0.0);
  EXPECT_LE(j["p_xi"].get<double>(), 1.0);

  auto v = run({"verify", "--model", str(path("omega") / "pruned.ckpt"), "--key", str(path("key.amk")), "--bounds",
                str(path("b") / "bounds.json"), "--out", str(path("v_pruned"))});
  EXPECT_TRUE(v.code == cli::kOk || v.code == cli::kInconclusive || v.code == cli::kIndependent) << v.err;
  auto report = load_report(path("v_pruned") / "report.json");
  EXPECT_TRUE(report.p_omega.has_value());
}

TEST_F(CliPipeline, ExtractListsMessages) {
  auto r = run({"extract", "--model", str(path("marked.ckpt")), "--key", str(path("key.amk")), "--out",
                str(path("x"))});
  EXPECT_EQ(r.code, cli::kOk) << r.err;
}

TEST(Cli, SyntheticBoundsAtTheReferenceOperatingPoint) {
  testing::TempDir dir;
  auto r = run({"bounds", "--n", "32", "--N", "1000", "--models", "1000", "--tau", "5", "--alpha", "5e-6",
                "--r-upper", "750", "--r-lower", "600", "--out", str(dir.path())});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  auto j = load_json(dir / "bounds.json");
  EXPECT_TRUE(std::isfinite(j["p_omega"].get<double>()));
  EXPECT_TRUE(std::isfinite(j["p_xi"].get<double>()));
  EXPECT_EQ(j["policy"]["r_upper"], 750);
}

}  // namespace
}  // namespace activemark
