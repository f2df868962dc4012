#include <array>
#include <ostream>

#include "context.hpp"
#include "vvlab/cli/cli.hpp"
#include "vvlab/error.hpp"

namespace vvlab::cli {

namespace {

constexpr std::array<const char*, 13> kCommands = {
    "gen-corpus",    "train-lm",   "train-classifier", "train-probe",    "rank-negative",
    "project-values", "logit-lens", "weight-diff",      "act-diff",       "ppo",
    "intervene-eval", "eval-sentiment", "sweep-lambda2"};

int fail(std::ostream& err, const char* kind, int code, const std::string& message) {
  const nlohmann::json line = {{"error", kind}, {"exit_code", code}, {"message", message}};
  err << line.dump() << "\n";
  return code;
}

}  // namespace

std::span<const char* const> command_names() { return kCommands; }

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app("Value-vector analysis of sentiment alignment on a toy GPT-2.", "vvlab");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");
  Registry registry;
  add_data_commands(app, registry);
  add_interpret_commands(app, registry);
  add_ppo_commands(app, registry);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto selected = app.get_subcommands();
    out << (selected.empty() ? app.help() : selected.front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    return fail(err, "usage", kExitUsage, e.what());
  }

  Command* cmd = registry.find(app.get_subcommands().front());
  try {
    RunContext ctx(*cmd->app, cmd->out_dir, out);
    cmd->action(ctx);
    ctx.finish();
  } catch (const DivergenceError& e) {
    return fail(err, "divergence", kExitDivergence, e.what());
  } catch (const IndexError& e) {
    return fail(err, "index", kExitValidation, e.what());
  } catch (const ShapeError& e) {
    return fail(err, "shape", kExitValidation, e.what());
  } catch (const ContractError& e) {
    return fail(err, "contract", kExitValidation, e.what());
  } catch (const ValidationError& e) {
    return fail(err, "validation", kExitValidation, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(err, "validation", kExitValidation, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(err, "io", kExitValidation, e.what());
  } catch (const std::exception& e) {
    return fail(err, "internal", kExitInternal, e.what());
  }
  return kExitOk;
}

}  // namespace vvlab::cli
