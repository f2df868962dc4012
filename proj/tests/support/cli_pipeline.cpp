#include "cli_pipeline.hpp"

#include <sstream>

#include "json.hpp"
#include "vvlab/cli/cli.hpp"
#include "vvlab/io/hash.hpp"

namespace vvlab::testing {

CliResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::vector<std::string>> small_pipeline(const std::filesystem::path& dir) {
  const std::string d = dir.string();
  const auto f = [&](const std::string& name) { return (dir / name).string(); };
  const std::vector<std::string> ppo_small = {"--set", "iterations=2", "--set", "batch_prompts=8",
                                              "--set", "minibatch_prompts=4"};
  std::vector<std::string> ppo = {"ppo", "--ckpt", f("lm.mchk"), "--classifier",
                                  f("classifier.mchk"), "--prompts", f("prompts.txt"),
                                  "--negset", f("negset.json"), "--out", d};
  ppo.insert(ppo.end(), ppo_small.begin(), ppo_small.end());
  std::vector<std::string> sweep = {"sweep-lambda2", "--ckpt", f("lm.mchk"), "--classifier",
                                    f("classifier.mchk"), "--prompts", f("prompts.txt"),
                                    "--negset", f("negset.json"), "--values", "0,1e-4",
                                    "--out", d};
  sweep.insert(sweep.end(), ppo_small.begin(), ppo_small.end());
  return {
      {"gen-corpus", "--sentences", "300", "--prompts", "16", "--heldout-prompts", "8", "--seed",
       "3", "--out", d},
      {"train-lm", "--corpus", f("corpus.tsv"), "--epochs", "1", "--layers", "2", "--d-model",
       "32", "--heads", "2", "--d-mlp", "64", "--out", d},
      {"train-classifier", "--corpus", f("corpus.tsv"), "--vocab", f("vocab.txt"), "--epochs",
       "2", "--out", d},
      {"train-probe", "--ckpt", f("lm.mchk"), "--corpus", f("corpus.tsv"), "--iterations", "100",
       "--out", d},
      {"rank-negative", "--ckpt", f("lm.mchk"), "--probe", f("probe.json"), "--k", "10", "--out",
       d},
      {"project-values", "--ckpt", f("lm.mchk"), "--negset", f("negset.json"), "--out", d},
      {"logit-lens", "--ckpt", f("lm.mchk"), "--prompts", f("heldout_prompts.txt"), "--target",
       ".", "--negset", f("negset.json"), "--alpha", "10", "--out", d},
      std::move(ppo),
      {"weight-diff", "--a", f("lm.mchk"), "--b", f("ppo.mchk"), "--out", d},
      {"act-diff", "--a", f("lm.mchk"), "--b", f("ppo.mchk"), "--negset", f("negset.json"),
       "--prompts", f("heldout_prompts.txt"), "--out", d},
      {"eval-sentiment", "--ckpt", f("lm.mchk"), "--post", f("ppo.mchk"), "--classifier",
       f("classifier.mchk"), "--prompts", f("heldout_prompts.txt"), "--out", d},
      {"intervene-eval", "--ckpt", f("ppo.mchk"), "--negset", f("negset.json"), "--alpha", "10",
       "--classifier", f("classifier.mchk"), "--prompts", f("heldout_prompts.txt"), "--out", d},
      std::move(sweep),
  };
}

std::map<std::string, std::string> normalized_outputs(const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    std::string bytes = io::read_file(entry.path());
    if (name.ends_with(".manifest.json")) {
      auto j = nlohmann::json::parse(bytes);
      for (const char* field : cli::kWallClockFields) j.erase(field);
      bytes = j.dump(2);
    }
    files[name] = std::move(bytes);
  }
  return files;
}

}  // namespace vvlab::testing
