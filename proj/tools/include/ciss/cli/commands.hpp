#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace ciss::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;

// Each command reports errors on stderr via the logger and returns the
// exit code instead of throwing.
int command_run(const std::filesystem::path& config_path,
                const std::vector<std::string>& overrides, std::size_t jobs,
                bool force);
int command_plot(const std::filesystem::path& run_dir);
int command_compare(const std::vector<std::filesystem::path>& run_dirs,
                    std::ostream& out);

// Sets the global log level from CISS_LOG (error, info, debug).
void configure_logging();

}  // namespace ciss::cli
