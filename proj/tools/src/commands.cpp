#include "ciss/cli/commands.hpp"

#include <cstdlib>
#include <ostream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ciss/cli/config.hpp"
#include "ciss/cli/csv.hpp"
#include "ciss/cli/report.hpp"
#include "ciss/cli/runner.hpp"
#include "ciss/error.hpp"

namespace ciss::cli {
namespace {

template <typename F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const NumericError& e) {
    spdlog::error("numerical failure: {}", e.what());
    return kExitNumeric;
  } catch (const IoError& e) {
    spdlog::error("I/O failure: {}", e.what());
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("I/O failure: {}", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
}

}  // namespace

int command_run(const std::filesystem::path& config_path,
                const std::vector<std::string>& overrides, std::size_t jobs,
                bool force) {
  return guarded([&] {
    std::string text;
    try {
      text = read_file(config_path);
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(fmt::format("{}: invalid JSON: {}",
                                    config_path.string(), e.what()));
    }
    for (const std::string& o : overrides) apply_override(doc, o);
    const ExperimentConfig config = parse_config(doc.dump());
    const auto runs = expand_runs(config);
    spdlog::info("{} run(s), up to {} at a time", runs.size(), jobs);
    const auto status = execute_runs(runs, jobs, force);
    for (const RunStatus& s : status) {
      spdlog::info("{} {}", s.skipped ? "kept (complete)" : "wrote", s.dir.string());
    }
    return kExitOk;
  });
}

int command_plot(const std::filesystem::path& run_dir) {
  return guarded([&] {
    for (const auto& p : plot_run(run_dir)) spdlog::info("wrote {}", p.string());
    return kExitOk;
  });
}

int command_compare(const std::vector<std::filesystem::path>& run_dirs,
                    std::ostream& out) {
  return guarded([&] {
    out << compare_runs(run_dirs);
    return kExitOk;
  });
}

void configure_logging() {
  spdlog::set_level(spdlog::level::info);
  const char* env = std::getenv("CISS_LOG");
  if (env == nullptr || *env == '\0') return;
  const std::string level = env;
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::warn("CISS_LOG='{}' not one of error, info, debug; using info", level);
  }
}

}  // namespace ciss::cli
