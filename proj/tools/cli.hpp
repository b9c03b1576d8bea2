#pragma once

// The mcsformer command-line tool as a library, so tests can run commands
// in-process. Subcommands: synth, ingest, fpt, featurize, train, eval,
// predict, exp-loss, replay.
//
// Every successful command writes <out>/manifest.json (a RunManifest) next to
// its artifacts. On failure the command prints one line
//   error: <ErrorClass>: <message>
// to the error stream, removes whatever it had written, and returns
//   2 usage error, 3 data error, 4 numeric failure.

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

namespace mcsformer::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Runs one command. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Executes a command from an already-resolved flat configuration (the
/// "config" object of a RunManifest), writing into `out_dir`. This is what
/// `replay` uses; it throws mcsformer::Error instead of returning exit codes.
void execute(const std::string& command, const nlohmann::json& config,
             const std::filesystem::path& out_dir, std::ostream& log);

/// Names of all subcommands.
std::vector<std::string> commands();

}  // namespace mcsformer::cli
