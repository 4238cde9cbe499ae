#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "beamsense/config.hpp"
#include "beamsense/error.hpp"
#include "beamsense/pipeline.hpp"

int main(int argc, char** argv) {
  using namespace beamsense;
  CLI::App app{"Application detection from sub-THz received-power dynamics and adaptive beam tracking."};
  app.fallthrough();

  std::string config_path, out_dir = "out", stages_arg;
  std::optional<std::uint64_t> seed;
  bool force = false, print_default = false;
  app.add_option("--config", config_path, "JSON experiment config; missing keys take defaults")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "override the master seed");
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_flag("--force", force, "overwrite existing outputs");
  app.add_option("--stages", stages_arg, "comma-separated stages for 'all', e.g. calibrate,synth,features");
  app.add_flag("--print-default-config", print_default, "print the default config as JSON and exit");

  std::string chosen;
  for (const auto& s : pipeline_stages())
    app.add_subcommand(s, "run the " + s + " stage")->callback([&chosen, s] { chosen = s; });
  app.add_subcommand("all", "run every stage (or those given by --stages)")->callback([&chosen] { chosen = "all"; });

  CLI11_PARSE(app, argc, argv);

  if (print_default) {
    std::cout << to_json(ExperimentConfig{}).dump(2) << '\n';
    return 0;
  }
  if (chosen.empty()) {
    std::cerr << app.help();
    return 2;
  }

  try {
    ExperimentConfig cfg;
    try {
      if (!config_path.empty()) cfg = load_config(config_path);
    } catch (const ValidationError& e) {
      throw StageError("config", e.what());
    }
    if (seed) cfg.seed = *seed;

    PipelineOptions opts;
    opts.out_dir = out_dir;
    opts.force = force;
    if (chosen == "all") {
      if (!stages_arg.empty()) opts.stages = parse_stage_list(stages_arg);
    } else {
      if (!stages_arg.empty()) throw StageError("config", "--stages only applies to 'all'");
      opts.stages = {chosen};
    }
    run_pipeline(cfg, opts);
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
