#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ciss/cli/config.hpp"
#include "ciss/protocol.hpp"

namespace ciss::cli {

// Rendered CSV files of one finished scenario.
struct RunTables {
  std::string trace;            // step,epoch,iter,lr,L_mbce,L_kd,L_dkd,L_ac,L_total
  std::string metrics;          // step,class_id,iou
  std::string metrics_summary;  // step,miou_b,miou_n,miou_all,hiou
  std::string drift;            // step,iter,dz,dz_plus,dz_minus
};

RunTables render_tables(const ScenarioResult& result);

// summary.json: final per-step reports plus the config echo.
nlohmann::json summary_json(const ExperimentConfig& config,
                            const ScenarioResult& result);

struct RunStatus {
  std::filesystem::path dir;
  bool skipped = false;  // already complete and not forced
};

// A run directory is complete once its summary.json exists.
bool run_complete(const std::filesystem::path& dir);

// Executes one expanded config into output_dir/run_name(). Existing
// complete runs are left untouched unless `force`.
RunStatus execute_run(const ExperimentConfig& config, bool force);

// Runs every config, up to `jobs` at a time. All runs are attempted; the
// first failure (in input order) is rethrown afterwards.
std::vector<RunStatus> execute_runs(const std::vector<ExperimentConfig>& runs,
                                    std::size_t jobs, bool force);

}  // namespace ciss::cli
