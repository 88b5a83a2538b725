#include "ciss/cli/runner.hpp"

#include <atomic>
#include <exception>
#include <optional>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ciss/checkpoint.hpp"
#include "ciss/cli/csv.hpp"
#include "ciss/error.hpp"

namespace ciss::cli {

namespace fs = std::filesystem;
using nlohmann::json;

RunTables render_tables(const ScenarioResult& result) {
  CsvWriter trace({"step", "epoch", "iter", "lr", "L_mbce", "L_kd", "L_dkd",
                   "L_ac", "L_total"});
  CsvWriter metrics({"step", "class_id", "iou"});
  CsvWriter summary({"step", "miou_b", "miou_n", "miou_all", "hiou"});
  CsvWriter drift({"step", "iter", "dz", "dz_plus", "dz_minus"});
  for (const StepOutcome& s : result.steps) {
    for (const TraceRow& r : s.trace) {
      trace.field(r.step).field(r.epoch).field(r.iter).field(r.lr)
          .field(r.mbce).field(r.kd).field(r.dkd).field(r.ac).field(r.total);
      trace.end_row();
    }
    for (const auto& [cls, v] : s.report.per_class) {
      metrics.field(s.step).field(cls).field(v);
      metrics.end_row();
    }
    summary.field(s.step).field(s.report.miou_b).field(s.report.miou_n)
        .field(s.report.miou_all).field(s.report.hiou);
    summary.end_row();
    for (const DriftRow& d : s.drift) {
      drift.field(d.step).field(d.iter).field(d.stats.dz)
          .field(d.stats.dz_plus).field(d.stats.dz_minus);
      drift.end_row();
    }
  }
  return {trace.str(), metrics.str(), summary.str(), drift.str()};
}

namespace {

json optional_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

json summary_json(const ExperimentConfig& config, const ScenarioResult& result) {
  const ScenarioPlan plan = config.plan();
  json steps = json::array();
  for (const StepOutcome& s : result.steps) {
    json per_class = json::object();
    for (const auto& [cls, v] : s.report.per_class) {
      per_class[std::to_string(cls)] = optional_json(v);
    }
    steps.push_back({{"step", s.step},
                     {"classes", plan.classes(s.step)},
                     {"miou_b", s.report.miou_b},
                     {"miou_n", optional_json(s.report.miou_n)},
                     {"miou_all", s.report.miou_all},
                     {"hiou", optional_json(s.report.hiou)},
                     {"per_class_iou", per_class},
                     {"initial_false_activation",
                      optional_json(s.initial_false_activation)}});
  }
  ExperimentConfig echo = config;
  echo.ablations.clear();
  echo.seeds.clear();
  return {{"run", config.run_name()},
          {"group", config.name},
          {"scenario", plan.notation()},
          {"setting", std::string(setting_name(plan.setting()))},
          {"num_classes", config.data.num_classes},
          {"steps", steps},
          {"config", to_json(echo)}};
}

bool run_complete(const fs::path& dir) {
  return fs::exists(dir / "summary.json");
}

RunStatus execute_run(const ExperimentConfig& config, bool force) {
  const fs::path dir = config.output_dir / config.run_name();
  if (run_complete(dir) && !force) {
    spdlog::info("{}: already complete, skipping (use --force to rerun)",
                 dir.string());
    return {dir, true};
  }
  std::error_code ec;
  fs::remove_all(dir, ec);
  if (ec) throw IoError(fmt::format("cannot clear {}: {}", dir.string(), ec.message()));
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));

  spdlog::info("{}: scenario {} {}, seed {}", config.run_name(),
               config.scenario, setting_name(config.setting), config.train.seed);
  const SamplePools pools = generate(config.data);
  ScenarioOptions options;
  options.on_step_complete = [&](const StepOutcome& s) {
    const fs::path step_dir = dir / fmt::format("step_{}", s.step);
    std::error_code mk;
    fs::create_directories(step_dir, mk);
    if (mk) throw IoError(fmt::format("cannot create {}: {}", step_dir.string(), mk.message()));
    save_checkpoint(s.model, step_dir / "model");
  };
  const ScenarioResult result =
      run_scenario(config.plan(), pools, config.train, options);

  const RunTables tables = render_tables(result);
  write_file_atomic(dir / "trace.csv", tables.trace);
  write_file_atomic(dir / "metrics.csv", tables.metrics);
  write_file_atomic(dir / "metrics_summary.csv", tables.metrics_summary);
  write_file_atomic(dir / "drift.csv", tables.drift);
  write_file_atomic(dir / "summary.json",
                    summary_json(config, result).dump(2) + "\n");
  spdlog::info("{}: done", dir.string());
  return {dir, false};
}

std::vector<RunStatus> execute_runs(const std::vector<ExperimentConfig>& runs,
                                    std::size_t jobs, bool force) {
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (runs[i].output_dir / runs[i].run_name() ==
          runs[j].output_dir / runs[j].run_name()) {
        throw ConfigError(fmt::format("two runs share the directory name '{}'",
                                      runs[i].run_name()));
      }
    }
  }
  std::vector<RunStatus> status(runs.size());
  std::vector<std::exception_ptr> errors(runs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      try {
        status[i] = execute_run(runs[i], force);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, runs.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return status;
}

}  // namespace ciss::cli
