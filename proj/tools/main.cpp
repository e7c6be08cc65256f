#include <CLI11.hpp>

#include <iostream>

#include "bms/errors.hpp"
#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace bms::cli;
  CLI::App app{"Diffusion sampler training, sampling and evaluation"};
  app.footer("Worker threads: set BMS_NUM_WORKERS (results do not depend on it).");
  app.require_subcommand(1);

  TrainOptions tr;
  std::uint64_t train_seed = 0;
  auto* train = app.add_subcommand("train", "Train a sampler from a config file into a new run directory");
  train->add_option("--config", tr.config_path, "Experiment config (YAML)")->required()->check(CLI::ExistingFile);
  auto* train_seed_opt = train->add_option("--seed", train_seed, "Override the config seed");
  train->add_option("--out", tr.out, "Parent directory for the run (default: config output_dir)");
  train->add_flag("--desk-scale", tr.desk_scale, "Divide outer steps, inner steps and buffer size by 10");

  SampleOptions sa;
  auto* sample = app.add_subcommand("sample", "Simulate terminal samples from a checkpoint");
  sample->add_option("--checkpoint", sa.checkpoint, "Checkpoint file or run directory")
      ->required()
      ->check(CLI::ExistingPath);
  sample->add_option("-n,--n", sa.n, "Number of samples")->capture_default_str();
  sample->add_option("--seed", sa.seed, "Simulation seed")->capture_default_str();
  sample->add_option("--out", sa.out, "Output sample file")->required();

  EvaluateOptions ev;
  std::size_t eval_n = 0;
  auto* evaluate = app.add_subcommand("evaluate", "Compute sample-quality metrics");
  evaluate->add_option("--input", ev.input, "Sample file, checkpoint or run directory")->required();
  evaluate->add_option("--config", ev.config_path, "Config with target and metrics (default: the run's config.yaml)");
  evaluate->add_option("--reference", ev.reference, "Reference sample file (default: exact target samples)");
  auto* eval_n_opt = evaluate->add_option("-n,--n", eval_n, "Samples drawn when the input is a checkpoint");
  evaluate->add_option("--seed", ev.seed, "Seed for sampling, reference draws and projections")->capture_default_str();
  evaluate->add_option("--out", ev.out, "Report directory (default: <run>/eval or ./eval)");

  OracleCheckOptions oc;
  auto* oracle = app.add_subcommand("oracle-check", "Run the closed-form identity checks");
  oracle->add_option("--seed", oc.seed, "Seed")->capture_default_str();
  oracle->add_option("--inject-kappa-fault", oc.kappa_fault)->group("");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      if (*train_seed_opt) tr.seed = train_seed;
      return cmd_train(tr, std::cerr);
    }
    if (*sample) return cmd_sample(sa, std::cerr);
    if (*evaluate) {
      if (*eval_n_opt) ev.n_samples = eval_n;
      return cmd_evaluate(ev, std::cerr);
    }
    if (*oracle) return cmd_oracle_check(oc, std::cout);
  } catch (const bms::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
