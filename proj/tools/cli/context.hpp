#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vvlab/interpret/vectors.hpp"
#include "vvlab/lm/lm_checkpoint.hpp"
#include "vvlab/reward/classifier.hpp"

namespace vvlab::cli {

// Files read and written by one command, and the manifest describing them.
class RunContext {
 public:
  RunContext(const CLI::App& app, std::filesystem::path out_dir, std::ostream& out);

  const std::filesystem::path& out_dir() const { return out_dir_; }
  std::ostream& out() { return out_; }

  void set_seed(std::uint64_t seed) { seed_ = seed; }
  void input(const std::filesystem::path& path);
  // Path of `name` inside the output directory.
  std::filesystem::path output_path(const std::string& name) const { return out_dir_ / name; }
  // Writes `content` to out_dir/name and records it.
  void write(const std::string& name, std::string_view content);
  // Records a file some other writer already produced.
  void record_output(const std::filesystem::path& path);

  // Writes <command>.manifest.json next to the outputs.
  void finish();

 private:
  std::string command_;
  nlohmann::json config_;
  std::filesystem::path out_dir_;
  std::ostream& out_;
  std::optional<std::uint64_t> seed_;
  std::vector<std::filesystem::path> inputs_, outputs_;
  std::chrono::system_clock::time_point started_;
  std::chrono::steady_clock::time_point started_steady_;
};

struct Command {
  CLI::App* app = nullptr;
  std::string out_dir;
  std::function<void(RunContext&)> action;
};

class Registry {
 public:
  // Adds the subcommand with its --out flag.
  Command& add(CLI::App& parent, const std::string& name, const std::string& description);
  Command* find(const CLI::App* app);

 private:
  std::vector<std::unique_ptr<Command>> commands_;
};

void add_data_commands(CLI::App& app, Registry& registry);
void add_interpret_commands(CLI::App& app, Registry& registry);
void add_ppo_commands(CLI::App& app, Registry& registry);

// Shared flag helpers.
CLI::Option* add_threads(CLI::App* app, std::size_t& threads);
CLI::Option* add_vocab(CLI::App* app, std::string& vocab);

// Loaders that record their inputs.
lm::LoadedLm load_model(RunContext& ctx, const std::string& path, const std::string& vocab);
reward::SentimentClassifier load_classifier(RunContext& ctx, const std::string& path,
                                            const lm::Tokenizer& expected);
std::vector<std::vector<lm::TokenId>> load_text_prompts(RunContext& ctx, const std::string& path,
                                                        const lm::Tokenizer& tokenizer);
std::vector<std::vector<lm::TokenId>> load_id_prompts(RunContext& ctx, const std::string& path);
interpret::NegativeSet load_negset(RunContext& ctx, const std::string& path);

// The first `k` ids of `set` (all when k is 0), each scaled by `alpha`.
lm::InterventionSpec scale_spec(const interpret::NegativeSet& set, double alpha, std::size_t k);

// Nine significant digits, the precision of every CSV number.
std::string num(double v);
// Quotes a CSV field when it holds a comma, quote or line break.
std::string csv_field(std::string_view s);

}  // namespace vvlab::cli
