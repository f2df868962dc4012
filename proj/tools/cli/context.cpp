#include "context.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <ostream>

#include "vvlab/cli/cli.hpp"
#include "vvlab/error.hpp"
#include "vvlab/io/corpus.hpp"
#include "vvlab/io/hash.hpp"
#include "vvlab/lm/training.hpp"

namespace vvlab::cli {

namespace {

nlohmann::json option_value(const CLI::Option& opt) {
  if (opt.count() == 0) {
    const std::string& d = opt.get_default_str();
    if (d.empty()) return nullptr;
    return d;
  }
  const std::vector<std::string>& r = opt.results();
  if (opt.get_expected_max() <= 1 && r.size() == 1) return r.front();
  return r;
}

std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t secs = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json file_list(const std::vector<std::filesystem::path>& paths) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& p : paths) {
    list.push_back({{"path", p.generic_string()}, {"git_blob", io::git_blob_hash_file(p)}});
  }
  return list;
}

void add_unique(std::vector<std::filesystem::path>& list, const std::filesystem::path& p) {
  if (std::find(list.begin(), list.end(), p) == list.end()) list.push_back(p);
}

}  // namespace

RunContext::RunContext(const CLI::App& app, std::filesystem::path out_dir, std::ostream& out)
    : command_(app.get_name()),
      config_(nlohmann::json::object()),
      out_dir_(std::move(out_dir)),
      out_(out),
      started_(std::chrono::system_clock::now()),
      started_steady_(std::chrono::steady_clock::now()) {
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "help-all") continue;
    config_[name] = option_value(*opt);
  }
}

void RunContext::input(const std::filesystem::path& path) { add_unique(inputs_, path); }

void RunContext::write(const std::string& name, std::string_view content) {
  const auto path = output_path(name);
  io::write_file_atomic(path, content);
  record_output(path);
}

void RunContext::record_output(const std::filesystem::path& path) { add_unique(outputs_, path); }

void RunContext::finish() {
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started_steady_).count();
  nlohmann::json m = {
      {"command", command_},
      {"config", config_},
      {"seed", seed_ ? nlohmann::json(*seed_) : nlohmann::json(nullptr)},
      {"inputs", file_list(inputs_)},
      {"outputs", file_list(outputs_)},
      {kWallClockFields[0], utc_timestamp(started_)},
      {kWallClockFields[1], seconds},
  };
  io::write_file_atomic(out_dir_ / (command_ + ".manifest.json"), m.dump(2) + "\n");
}

Command& Registry::add(CLI::App& parent, const std::string& name,
                       const std::string& description) {
  auto cmd = std::make_unique<Command>();
  cmd->app = parent.add_subcommand(name, description);
  cmd->out_dir = ".";
  cmd->app->add_option("--out", cmd->out_dir, "Output directory")
      ->type_name("DIR")
      ->envname(kOutDirEnv);
  commands_.push_back(std::move(cmd));
  return *commands_.back();
}

Command* Registry::find(const CLI::App* app) {
  for (auto& c : commands_) {
    if (c->app == app) return c.get();
  }
  return nullptr;
}

CLI::Option* add_threads(CLI::App* app, std::size_t& threads) {
  return app->add_option("--threads", threads, "Worker threads; results do not depend on it")
      ->check(CLI::PositiveNumber);
}

CLI::Option* add_vocab(CLI::App* app, std::string& vocab) {
  return app->add_option("--vocab", vocab,
                         "Vocabulary file for a checkpoint that does not embed one")
      ->type_name("FILE");
}

lm::LoadedLm load_model(RunContext& ctx, const std::string& path, const std::string& vocab) {
  ctx.input(path);
  std::optional<lm::Tokenizer> tok;
  if (!vocab.empty()) {
    ctx.input(vocab);
    tok = lm::Tokenizer::load(vocab);
  }
  return lm::load_lm(path, tok);
}

reward::SentimentClassifier load_classifier(RunContext& ctx, const std::string& path,
                                            const lm::Tokenizer& expected) {
  ctx.input(path);
  std::string hash;
  auto clf = reward::SentimentClassifier::from_checkpoint(io::Checkpoint::load(path), &hash);
  if (hash != expected.hash()) {
    throw ValidationError("tokenizer mismatch: classifier " + path + " has " + hash +
                          ", model has " + expected.hash());
  }
  return clf;
}

std::vector<std::vector<lm::TokenId>> load_text_prompts(RunContext& ctx, const std::string& path,
                                                        const lm::Tokenizer& tokenizer) {
  if (!tokenizer.can_encode()) {
    throw ValidationError("the vocabulary cannot encode text; pass pre-tokenized ids instead");
  }
  ctx.input(path);
  const auto lines = io::read_lines(path);
  if (lines.empty()) throw ValidationError("no prompts in " + path);
  return lm::encode_prompts(tokenizer, lines);
}

std::vector<std::vector<lm::TokenId>> load_id_prompts(RunContext& ctx, const std::string& path) {
  ctx.input(path);
  auto ids = io::read_token_id_lines(path);
  if (ids.empty()) throw ValidationError("no prompts in " + path);
  return ids;
}

interpret::NegativeSet load_negset(RunContext& ctx, const std::string& path) {
  ctx.input(path);
  return interpret::load_negative_set(path);
}

lm::InterventionSpec scale_spec(const interpret::NegativeSet& set, double alpha, std::size_t k) {
  if (k > set.size()) {
    throw ValidationError("asked for " + std::to_string(k) + " vectors from a set of " +
                          std::to_string(set.size()));
  }
  const std::size_t n = k == 0 ? set.size() : k;
  lm::InterventionSpec spec;
  for (std::size_t i = 0; i < n; ++i) spec.entries.push_back({set[i].id, alpha});
  return spec;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

}  // namespace vvlab::cli
