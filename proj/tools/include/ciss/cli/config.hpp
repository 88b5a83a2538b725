#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ciss/protocol.hpp"
#include "ciss/synthdata.hpp"

namespace ciss::cli {

struct Ablation {
  std::string name;
  // Dotted-path overrides, e.g. {"train.alpha": 0}.
  nlohmann::json overrides = nlohmann::json::object();
};

struct ExperimentConfig {
  std::string name = "base";
  std::filesystem::path output_dir = "runs";
  DatasetParams data;
  std::string scenario = "4-1";
  Setting setting = Setting::kOverlapped;
  TrainConfig train;
  // Training seeds to sweep; empty means just train.seed.
  std::vector<std::uint64_t> seeds;
  std::vector<Ablation> ablations;

  ScenarioPlan plan() const {
    return ScenarioPlan::parse(scenario, data.num_classes, setting);
  }
  // Directory name of a run: <name>-s<train seed>.
  std::string run_name() const;
};

// Parses and validates a config document. Unknown keys, wrong types and
// out-of-range values raise ConfigError naming the field (JSON syntax errors
// carry line and column).
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Full document for `config`, every field explicit. Parsing it back yields
// an identical config.
nlohmann::json to_json(const ExperimentConfig& config);

// Applies "a.b.c=value" to a raw config document. The value is parsed as
// JSON when possible, otherwise taken as a string. The path must name an
// existing field.
void apply_override(nlohmann::json& document, std::string_view assignment);

// The base run followed by one config per ablation (overrides applied,
// name replaced), each repeated per entry of `seeds`. Expanded configs have
// empty ablation and seed lists.
std::vector<ExperimentConfig> expand_runs(const ExperimentConfig& config);

}  // namespace ciss::cli
