#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace mrbsdej {

struct CommandOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;     ///< overrides master_seed
    std::optional<std::string> out_dir;    ///< overrides experiment.output_dir
    std::optional<std::string> backend;    ///< exact | mc
    std::optional<int> jobs;
    bool force = false;                    ///< run solve subcommands despite failed validation
};

/// Exit codes: 0 success, 1 runtime failure, 2 bad config or refused request,
/// 3 validation failure.
enum ExitCode { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitValidation = 3 };

/// validate | solve-single | solve-particles | chaos-rate | probe-regularity.
/// Writes its artifacts atomically into the output directory, prints a one-line summary
/// to `out`, and on failure prints a JSON error report to `err` (also saved as error.json).
int run_subcommand(const std::string& name, const CommandOptions& options, std::ostream& out, std::ostream& err);

/// Writes `content` to a temporary file next to `path` and renames it into place.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace mrbsdej
