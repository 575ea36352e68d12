// lvlab: scenario runner for the latent voter model toolkit.
//
//   lvlab <scenario> --config FILE [--seed N] [--out DIR] [--workers K]
//
// Exit code 0 iff every invariant registered by the scenario passed.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "lvlab/scenario.hpp"

int main(int argc, char** argv) {
  CLI::App app{"lvlab: latent voter model simulation and analysis toolkit"};
  app.set_version_flag("--version", lvlab::kVersion);
  app.footer(lvlab::config_help_text());
  app.require_subcommand(0, 1);

  struct Options {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_given = false;
    int workers = 1;
    std::string scenario;
  } opt;

  for (const auto& [name, keys] : lvlab::detail::scenario_keys()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " scenario");
    sub->add_option("--config", opt.config, "config file (key = value lines)")
        ->required();
    sub->add_option("--out", opt.out, "output directory (default out-<scenario>)");
    auto* seed_opt = sub->add_option("--seed", opt.seed, "override the config seed");
    sub->add_option("--workers", opt.workers, "worker threads for replicates")
        ->check(CLI::PositiveNumber);
    sub->callback([&opt, name = name, seed_opt]() {
      opt.scenario = name;
      opt.seed_given = seed_opt->count() > 0;
    });
  }

  CLI11_PARSE(app, argc, argv);
  if (opt.scenario.empty()) {
    std::fputs(app.help().c_str(), stdout);
    return 0;
  }

  try {
    lvlab::ExperimentConfig cfg = lvlab::parse_config(opt.config, opt.scenario);
    if (opt.seed_given) cfg.seed = opt.seed;
    std::string out_dir = opt.out.empty() ? "out-" + opt.scenario : opt.out;
    lvlab::RunManifest manifest = lvlab::run_scenario(cfg, out_dir, opt.workers);
    std::printf("%s: wrote %zu outputs to %s (%.2fs)\n", opt.scenario.c_str(),
                manifest.outputs.size(), out_dir.c_str(), manifest.wall_clock_seconds);
    std::printf("invariants: %s\n", manifest.all_invariants_pass ? "pass" : "FAIL");
    return manifest.all_invariants_pass ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
