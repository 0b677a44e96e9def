// kgli: command-line frontend. One subcommand per experiment stage.

#include <CLI11.hpp>

#include <iostream>

#include "kgli/pipeline.hpp"

namespace pl = kgli::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Numerical laboratory for the inference-based Klein-Gordon derivation"};
  app.set_version_flag("--version", pl::version());
  bool formats = false;
  app.add_flag("--help-formats", formats, "Describe config and output file formats");
  app.require_subcommand(0, 1);

  pl::RunOptions opts;
  std::uint64_t seed = 0;
  std::string config, out = "kgli_out";
  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"solve", "Time-step the Klein-Gordon equation and write the level history"},
      {"sample", "Draw detector events from a density field"},
      {"analyze", "Evidence and Fisher information of a dataset under a model"},
      {"verify", "Run a verification suite (identity, hje, gauge, scale, dispersion, continuity)"},
      {"minimize", "Minimise the functional F from free-particle data"},
  };
  for (const auto& s : subs) {
    auto* sc = app.add_subcommand(s.name, s.help);
    sc->add_option("--config", config, "Run config (JSON)")->required();
    sc->add_option("--seed", seed, "Seed (overrides the config)");
    sc->add_option("--out", out, "Output directory")->capture_default_str();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : pl::kExitUsage;
  }
  if (formats) {
    std::cout << pl::help_formats();
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return pl::kExitUsage;
  }
  auto* sc = app.get_subcommands().front();
  opts.config = config;
  opts.out = out;
  if (sc->count("--seed") > 0) opts.seed = seed;
  return pl::run(sc->get_name(), opts, std::cerr);
}
