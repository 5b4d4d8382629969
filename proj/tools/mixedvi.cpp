#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mixedvi/cli.hpp"

int main(int argc, char** argv) {
  using namespace mixedvi;
  CLI::App app{"Mixed finite-element solver for antiplane Tresca frictional contact"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;

  auto add_common = [&](CLI::App* sub, bool run_flags) {
    sub->add_option("--config,config", config, "TOML run configuration")->required();
    if (!run_flags) return;
    sub->add_option("--out", out_dir, "output directory (overrides output.directory)");
    sub->add_option("--seed", seed, "random seed (overrides solver.seed)");
    sub->add_flag("--quiet", quiet, "suppress the summary line");
  };

  std::optional<TaskKind> command;
  for (TaskKind k : kAllTasks) {
    auto* sub = app.add_subcommand(std::string(to_string(k)), "run a config whose task.kind is " + std::string(to_string(k)));
    add_common(sub, true);
    sub->callback([&command, k] { command = k; });
  }
  auto* run = app.add_subcommand("run", "run the task declared in the config");
  add_common(run, true);
  auto* validate = app.add_subcommand("validate", "list every violated constraint of a config");
  add_common(validate, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kConfigError;
  }

  if (validate->parsed()) return cli::validate_file(config, std::cout, std::cerr);
  cli::RunOptions opts{out_dir, seed, quiet};
  return cli::run_file(config, command, opts, std::cout, std::cerr);
}
