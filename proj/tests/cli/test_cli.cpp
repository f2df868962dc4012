#include <gtest/gtest.h>

#include <cstdlib>
#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "cli_pipeline.hpp"
#include "json.hpp"
#include "temp_dir.hpp"
#include "vvlab/cli/cli.hpp"
#include "vvlab/interpret/vectors.hpp"
#include "vvlab/io/checkpoint.hpp"
#include "vvlab/io/hash.hpp"
#include "vvlab/lm/tokenizer.hpp"

namespace vvlab {
namespace {

using testing::CliResult;
using testing::run_cli;
using testing::TempDir;

std::filesystem::path snapshot_path(const std::string& command) {
  return std::filesystem::path(VVLAB_SNAPSHOT_DIR) / (command + ".help.txt");
}

nlohmann::json error_line(const CliResult& r) {
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
  return nlohmann::json::parse(r.err);
}

// One small pipeline shared by the tests below.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    for (const auto& args : testing::small_pipeline(dir_->path())) {
      const CliResult r = run_cli(args);
      ASSERT_EQ(r.code, 0) << args.front() << ": " << r.err;
    }
  }
  static void TearDownTestSuite() { delete dir_; }
  static std::string f(const std::string& name) { return (*dir_ / name).string(); }
  static TempDir* dir_;
};
TempDir* CliPipeline::dir_ = nullptr;

TEST(CliHelp, MatchesSnapshots) {
  const bool update = std::getenv("VVLAB_UPDATE_SNAPSHOTS") != nullptr;
  for (const char* cmd : cli::command_names()) {
    const CliResult r = run_cli({cmd, "--help"});
    ASSERT_EQ(r.code, 0) << cmd;
    EXPECT_NE(r.out.find("--out"), std::string::npos) << cmd;
    if (update) {
      std::ofstream(snapshot_path(cmd), std::ios::binary) << r.out;
      continue;
    }
    EXPECT_EQ(r.out, io::read_file(snapshot_path(cmd)))
        << cmd << ": rerun with VVLAB_UPDATE_SNAPSHOTS=1 after an intended change";
  }
}

TEST(CliHelp, TopLevelListsEveryCommand) {
  const CliResult r = run_cli({"--help"});
  ASSERT_EQ(r.code, 0);
  for (const char* cmd : cli::command_names()) {
    EXPECT_NE(r.out.find(cmd), std::string::npos) << cmd;
  }
}

TEST(CliErrors, UsageErrorsExitTwo) {
  for (const std::vector<std::string>& args :
       {std::vector<std::string>{}, {"no-such-command"}, {"rank-negative", "--probe", "p.json"},
        {"gen-corpus", "--bogus-flag"}, {"gen-corpus", "--sentences", "many"},
        {"project-values", "--ckpt", "lm.mchk"}}) {
    const CliResult r = run_cli(args);
    EXPECT_EQ(r.code, cli::kExitUsage) << r.err;
    EXPECT_EQ(error_line(r)["error"], "usage");
    EXPECT_EQ(error_line(r)["exit_code"], 2);
  }
}

TEST(CliErrors, MissingFileExitsThree) {
  TempDir dir;
  const CliResult r = run_cli({"train-lm", "--corpus", (dir / "absent.tsv").string(), "--out",
                               dir.path().string()});
  EXPECT_EQ(r.code, cli::kExitValidation);
  EXPECT_NE(error_line(r)["message"].get<std::string>().find("absent.tsv"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(dir / "train-lm.manifest.json"));
}

TEST(CliEnv, OutDirectoryDefaultsToEnvironment) {
  TempDir dir;
  ::setenv(cli::kOutDirEnv, dir.path().c_str(), 1);
  const CliResult r = run_cli({"gen-corpus", "--sentences", "10"});
  ::unsetenv(cli::kOutDirEnv);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "corpus.tsv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "gen-corpus.manifest.json"));
}

TEST_F(CliPipeline, EveryCommandWritesOneManifestWithHashes) {
  for (const char* cmd : cli::command_names()) {
    const auto path = *dir_ / (std::string(cmd) + ".manifest.json");
    ASSERT_TRUE(std::filesystem::exists(path)) << cmd;
    const auto m = nlohmann::json::parse(io::read_file(path));
    EXPECT_EQ(m["command"], cmd);
    EXPECT_TRUE(m.contains("wall_clock_seconds"));
    EXPECT_FALSE(m["outputs"].empty()) << cmd;
    for (const char* side : {"inputs", "outputs"}) {
      for (const auto& file : m[side]) {
        EXPECT_EQ(file["git_blob"], io::git_blob_hash_file(file["path"].get<std::string>()))
            << cmd << " " << file["path"];
      }
    }
  }
}

TEST_F(CliPipeline, NegativeSetHasRequestedLength) {
  EXPECT_EQ(interpret::load_negative_set(f("negset.json")).size(), 10u);
}

TEST_F(CliPipeline, WeightDiffHistogramCountsEveryValueVector) {
  std::ifstream in(f("weight_diff_histogram.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "bucket,low,high,value_count,key_count");
  std::size_t values = 0, keys = 0, rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell[5];
    for (auto& c : cell) std::getline(ss, c, ',');
    values += std::stoul(cell[3]);
    keys += std::stoul(cell[4]);
    ++rows;
  }
  EXPECT_EQ(rows, 11u);
  EXPECT_EQ(values, 2u * 64u);  // L * d_mlp of the pipeline model
  EXPECT_EQ(keys, 2u * 64u);
}

TEST_F(CliPipeline, SentimentHistogramHasTwentyBucketsPerColumn) {
  const std::string csv = io::read_file(f("sentiment_histogram.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "bucket,low,high,pre,post");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 21);
  const auto plot = nlohmann::json::parse(io::read_file(f("sentiment_plot.json")));
  EXPECT_EQ(plot["data"], "sentiment_histogram.csv");
}

TEST_F(CliPipeline, MetricsLogHasDocumentedColumns) {
  const std::string csv = io::read_file(f("ppo_metrics.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "iteration,mean_reward,mean_kl,clip_fraction,anchor_distance_mean");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST_F(CliPipeline, ThreadCountDoesNotChangeResults) {
  TempDir one, two;
  for (auto* d : {&one, &two}) {
    const CliResult r =
        run_cli({"eval-sentiment", "--ckpt", f("lm.mchk"), "--classifier", f("classifier.mchk"),
                 "--prompts", f("heldout_prompts.txt"), "--threads", d == &one ? "1" : "3",
                 "--out", d->path().string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(io::read_file(one / "sentiment_scores.csv"), io::read_file(two / "sentiment_scores.csv"));
}

TEST_F(CliPipeline, IndexErrorsExitThree) {
  TempDir out;
  const CliResult r = run_cli({"project-values", "--ckpt", f("lm.mchk"), "--layer", "2",
                               "--index", "0", "--out", out.path().string()});
  EXPECT_EQ(r.code, cli::kExitValidation);
  EXPECT_EQ(error_line(r)["error"], "index");
}

TEST_F(CliPipeline, DivergenceExitsFour) {
  TempDir out;
  const CliResult r = run_cli({"ppo", "--ckpt", f("lm.mchk"), "--classifier", f("classifier.mchk"),
                               "--prompts", f("prompts.txt"), "--set", "iterations=3", "--set",
                               "batch_prompts=8", "--set", "policy_lr=0.5", "--set",
                               "kl_ceiling=1e-9", "--out", out.path().string()});
  EXPECT_EQ(r.code, cli::kExitDivergence) << r.err;
  EXPECT_EQ(error_line(r)["error"], "divergence");
  EXPECT_FALSE(std::filesystem::exists(out / "ppo.mchk"));
}

TEST_F(CliPipeline, TokenizerMismatchIsRejected) {
  TempDir other;
  {
    std::ofstream(other / "c.tsv") << "1\tzebra quokka\n0\tyak narwhal\n1\tzebra\n0\tyak\n";
    const std::vector<std::string> lines = {"zebra quokka", "yak narwhal"};
    lm::Tokenizer::build(lines).save(other / "vocab.txt");
  }
  ASSERT_EQ(run_cli({"train-classifier", "--corpus", (other / "c.tsv").string(), "--vocab",
                     (other / "vocab.txt").string(), "--batch-size", "2", "--heldout-fraction",
                     "0", "--out", other.path().string()})
                .code,
            0);
  const CliResult r =
      run_cli({"eval-sentiment", "--ckpt", f("lm.mchk"), "--classifier",
               (other / "classifier.mchk").string(), "--prompts", f("heldout_prompts.txt"),
               "--out", other.path().string()});
  EXPECT_EQ(r.code, cli::kExitValidation);
  EXPECT_NE(error_line(r)["message"].get<std::string>().find("tokenizer mismatch"),
            std::string::npos);
}

TEST_F(CliPipeline, ArchitectureMismatchIsRejected) {
  TempDir other;
  ASSERT_EQ(run_cli({"train-lm", "--corpus", f("corpus.tsv"), "--epochs", "1", "--layers", "1",
                     "--d-model", "32", "--heads", "2", "--d-mlp", "64", "--out",
                     other.path().string()})
                .code,
            0);
  const CliResult r = run_cli({"weight-diff", "--a", f("lm.mchk"), "--b",
                               (other / "lm.mchk").string(), "--out", other.path().string()});
  EXPECT_EQ(r.code, cli::kExitValidation);
  EXPECT_NE(r.err.find("architecture"), std::string::npos) << r.err;
}

// A checkpoint with no embedded vocabulary and a vocabulary without the
// special tokens, as an exported GPT-2 provides.
TEST_F(CliPipeline, ExportedStyleCheckpointNeedsVocabAndIds) {
  TempDir ext;
  auto ckpt = io::Checkpoint::load(f("lm.mchk"));
  const auto tokens = ckpt.metadata["vocab"].get<std::vector<std::string>>();
  ckpt.metadata.erase("vocab");
  ckpt.metadata.erase("tokenizer_hash");
  ckpt.save(ext / "gpt.mchk");
  std::vector<std::string> renamed;
  for (std::size_t i = 0; i < tokens.size(); ++i) renamed.push_back("tok" + std::to_string(i));
  lm::Tokenizer::from_tokens(renamed).save(ext / "gpt_vocab.txt");
  std::ofstream(ext / "ids.txt") << "5 9 11\n7 7\n";
  const std::string out = ext.path().string();

  const CliResult no_vocab = run_cli({"project-values", "--ckpt", (ext / "gpt.mchk").string(),
                                      "--layer", "1", "--index", "3", "--out", out});
  EXPECT_EQ(no_vocab.code, cli::kExitValidation);

  const CliResult proj =
      run_cli({"project-values", "--ckpt", (ext / "gpt.mchk").string(), "--vocab",
               (ext / "gpt_vocab.txt").string(), "--layer", "1", "--index", "3", "--out", out});
  ASSERT_EQ(proj.code, 0) << proj.err;
  EXPECT_NE(io::read_file(ext / "projection.csv").find(",tok"), std::string::npos);

  const CliResult lens = run_cli({"logit-lens", "--ckpt", (ext / "gpt.mchk").string(), "--vocab",
                                  (ext / "gpt_vocab.txt").string(), "--prompt-ids",
                                  (ext / "ids.txt").string(), "--target-id", "4", "--out", out});
  ASSERT_EQ(lens.code, 0) << lens.err;
  // Two prompts, L + 1 = 3 rows each, plus the header.
  const std::string csv = io::read_file(ext / "lens.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);

  const CliResult text = run_cli({"logit-lens", "--ckpt", (ext / "gpt.mchk").string(), "--vocab",
                                  (ext / "gpt_vocab.txt").string(), "--prompts",
                                  f("heldout_prompts.txt"), "--target-id", "4", "--out", out});
  EXPECT_EQ(text.code, cli::kExitValidation);
}

}  // namespace
}  // namespace vvlab
