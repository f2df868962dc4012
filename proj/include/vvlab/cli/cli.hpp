#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>

namespace vvlab::cli {

// Default for every --out flag when set.
inline constexpr const char* kOutDirEnv = "VVLAB_OUT";

// Manifest fields that vary between otherwise identical runs.
inline constexpr std::array<const char*, 2> kWallClockFields = {"started_at_utc",
                                                                 "wall_clock_seconds"};

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
  kExitValidation = 3,
  kExitDivergence = 4,
};

// Runs one command. `args` excludes the program name. Failures print one
// JSON line {"error", "exit_code", "message"} to `err`.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

// Every command name, in help order.
std::span<const char* const> command_names();

}  // namespace vvlab::cli
