#include <iostream>

#include <CLI11.hpp>

#include "ciss/cli/commands.hpp"

int main(int argc, char** argv) {
  using namespace ciss::cli;
  CLI::App app{"Class-incremental segmentation experiments"};
  app.require_subcommand(1);

  std::filesystem::path config_path;
  std::vector<std::string> overrides;
  std::size_t jobs = 1;
  bool force = false;
  auto* run = app.add_subcommand("run", "Train and evaluate a configured scenario");
  run->add_option("--config", config_path, "Experiment JSON")->required();
  run->add_option("--override", overrides, "Field override, e.g. train.seed=2");
  run->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);
  run->add_flag("--force", force, "Rerun completed runs");

  std::filesystem::path plot_dir;
  auto* plot = app.add_subcommand("plot", "Render SVG charts for a run");
  plot->add_option("dir", plot_dir, "Run directory")->required();

  std::vector<std::filesystem::path> compare_dirs;
  auto* compare = app.add_subcommand("compare", "Tabulate final metrics");
  compare->add_option("dirs", compare_dirs, "Run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  configure_logging();
  if (*run) return command_run(config_path, overrides, jobs, force);
  if (*plot) return command_plot(plot_dir);
  return command_compare(compare_dirs, std::cout);
}
