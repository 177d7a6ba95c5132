// mudec: motor-unit decomposition and force decoding pipeline CLI.
//
// Subcommands mirror the pipeline stages: synth -> decompose -> dataset ->
// train -> eval -> plot. Every stage reads and writes files, so a run can be
// resumed at any stage. Exit codes: 0 ok, 2 bad parameters, 3 bad data,
// 4 numerical failure.

#include "mudec/stages.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

namespace {

using namespace mudec;

bool use_f64() {
  const char* p = std::getenv("MUDEC_PRECISION");
  return p != nullptr && std::string(p) == "f64";
}

PipelineConfig load_or_default(const std::string& config_path) {
  if (config_path.empty()) return PipelineConfig{};
  return load_config(config_path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"motor-unit decomposition and fingertip force decoding"};
  app.require_subcommand(1);
  app.fallthrough();  // let global flags appear after the subcommand name

  std::string config_path, out_dir = "out", in_dir, drive_dir, checkpoint;
  long long seed = -1;
  int jobs = 1, trial_index = 0;
  app.add_option("--config", config_path, "pipeline config JSON")->capture_default_str();
  app.add_option("--seed", seed, "master seed override");
  app.add_option("--jobs", jobs, "worker threads (currently single-threaded)");
  app.add_option("--out", out_dir, "output directory")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "generate a synthetic recording session");
  auto* decomp = app.add_subcommand("decompose", "fit decomposition and extract neural drives");
  decomp->add_option("--in", in_dir, "directory produced by synth")->required();
  auto* dataset = app.add_subcommand("dataset", "window drives into a decoder dataset");
  dataset->add_option("--drives", drive_dir, "directory produced by decompose")->required();
  auto* train_cmd = app.add_subcommand("train", "train a force decoder");
  train_cmd->add_option("--drives", drive_dir, "directory produced by decompose")->required();
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--drives", drive_dir, "directory produced by decompose")->required();
  auto* plot = app.add_subcommand("plot", "predicted vs measured force for one trial");
  plot->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  plot->add_option("--drives", drive_dir, "directory produced by decompose")->required();
  plot->add_option("--trial", trial_index, "trial index")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    PipelineConfig cfg = load_or_default(config_path);
    if (seed >= 0) cfg.apply_master_seed(static_cast<uint64_t>(seed));
    cfg.validate();
    auto log = [](const std::string& m) { std::cerr << "[mudec] " << m << "\n"; };

    if (*synth) {
      stages::cmd_synth(cfg, out_dir);
      std::cout << "wrote session to " << out_dir << "\n";
    } else if (*decomp) {
      const auto r = stages::cmd_decompose(cfg, in_dir, out_dir, log);
      std::cout << "units retained: " << r.model.n_units() << " across "
                << r.trials_processed << " trials; report in " << out_dir << "\n";
    } else if (*dataset) {
      const auto s = stages::cmd_dataset(cfg, drive_dir, out_dir);
      std::cout << s.dump(2) << "\n";
    } else if (*train_cmd) {
      const mudec::train::TrainReport r =
          use_f64() ? stages::cmd_train<double>(cfg, drive_dir, out_dir)
                    : stages::cmd_train<float>(cfg, drive_dir, out_dir);
      std::cout << stages::metrics_table(r, cfg.model);
    } else if (*eval_cmd) {
      const mudec::train::TrainReport r =
          use_f64() ? stages::cmd_eval<double>(cfg, checkpoint, drive_dir)
                    : stages::cmd_eval<float>(cfg, checkpoint, drive_dir);
      std::cout << stages::metrics_table(r, cfg.model);
    } else if (*plot) {
      if (use_f64())
        stages::cmd_plot<double>(cfg, checkpoint, drive_dir, trial_index, out_dir);
      else
        stages::cmd_plot<float>(cfg, checkpoint, drive_dir, trial_index, out_dir);
      std::cout << "wrote plot files to " << out_dir << "\n";
    }
  } catch (const ParameterError& e) {
    std::cerr << "parameter error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
