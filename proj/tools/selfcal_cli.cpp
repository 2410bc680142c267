// Command-line driver for toy classifier-guidance experiments.
#include "selfcal/experiment.hpp"
#include "selfcal/models/checkpoint.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace selfcal;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kDiverged = 3, kIoError = 4 };

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
};

void add_common(CLI::App* cmd, CommonOptions& opt, bool config_required) {
  auto* c = cmd->add_option("--config", opt.config, "experiment config (JSON)");
  if (config_required) c->required();
  cmd->add_option("--out", opt.out, "run directory")->required();
  cmd->add_option("--seed", opt.seed, "root seed, overrides the config");
  cmd->add_flag("--dry-run", opt.dry_run, "validate and print the resolved pipeline without executing");
}

struct LoadedConfig {
  ExperimentConfig config;
  std::string text;
};

// Config from --config, else the resolved copy inside the run directory.
LoadedConfig load_config(const CommonOptions& opt) {
  const RunPaths paths{opt.out};
  const fs::path path = opt.config.empty() ? paths.resolved_config() : fs::path(opt.config);
  if (!fs::exists(path)) {
    if (!opt.config.empty()) throw Error(ErrorCode::Io, "cannot read " + path.string());
    throw Error(ErrorCode::Config, "no config: pass --config or use a run directory");
  }
  LoadedConfig lc{load_experiment_config(path), read_text_file(path)};
  if (opt.seed) lc.config.set_seed(*opt.seed);
  return lc;
}

void print_dry_run(const ExperimentConfig& config, const std::vector<std::string>& stages) {
  std::cout << "preset: " << to_string(config.preset) << "\n";
  std::cout << "stages:";
  for (const std::string& s : stages) std::cout << " [" << s << "]";
  std::cout << "\n" << experiment_config_to_json(config).dump(2) << "\n";
}

// Records the config of a stage run so later stages can find it.
void record_config(const RunPaths& paths, const LoadedConfig& lc) {
  if (!fs::exists(paths.config())) write_text_file(paths.config(), lc.text);
  write_text_file(paths.resolved_config(), experiment_config_to_json(lc.config).dump(2) + "\n");
}

ToySplits data_for(const RunPaths& paths, const ExperimentConfig& config) {
  if (fs::exists(paths.labeled()) && fs::exists(paths.test())) return load_splits(paths);
  ToySplits data = generate_data(config);
  save_splits(paths, data);
  return data;
}

void log_line(const std::string& msg) { std::cerr << "[selfcal] " << msg << std::endl; }

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::Config:
      return kConfigError;
    case ErrorCode::TrainingDiverged:
    case ErrorCode::Diverged:
    case ErrorCode::SgldDiverged:
    case ErrorCode::NumericalOverflow:
      return kDiverged;
    case ErrorCode::Io:
    case ErrorCode::ParseError:
      return kIoError;
    default:
      return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selfcal: classifier guidance with self-calibration on 2D toy data"};
  app.require_subcommand(1);

  CommonOptions opt;
  std::vector<std::string> compare_dirs;
  std::string compare_out;

  struct Stage {
    const char* name;
    const char* help;
  };
  const Stage stages[] = {
      {"gen-data", "generate and save the labeled, unlabeled and test splits"},
      {"train-score", "train the unconditional score network"},
      {"train-classifier", "train the time-dependent classifier with the preset's losses"},
      {"train-cond", "train the conditional score network (cond / cfg presets)"},
      {"sample", "draw class-conditional samples from the trained models"},
      {"eval", "re-sample from checkpoints and write fields and metrics"},
      {"run", "execute the whole pipeline"},
  };
  std::map<std::string, CLI::App*> cmds;
  for (const Stage& s : stages) {
    CLI::App* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, opt, std::string(s.name) == "run");
    cmds[s.name] = cmd;
  }
  CLI::App* compare = app.add_subcommand("compare", "merge metrics of several runs into one table");
  compare->add_option("runs", compare_dirs, "run directories")->required();
  compare->add_option("--out", compare_out, "output directory for compare.csv and compare.json")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (compare->parsed()) {
      const std::vector<fs::path> dirs(compare_dirs.begin(), compare_dirs.end());
      const auto rows = collect_runs(dirs);
      write_text_file(fs::path(compare_out) / "compare.csv", compare_to_csv(rows));
      write_text_file(fs::path(compare_out) / "compare.json", compare_to_json(rows).dump(2) + "\n");
      std::cout << compare_to_csv(rows);
      return kOk;
    }

    LoadedConfig lc;
    try {
      lc = load_config(opt);
    } catch (const Error& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return exit_code_for(e);
    }
    const ExperimentConfig& config = lc.config;
    const RunPaths paths{opt.out};

    if (cmds["run"]->parsed()) {
      if (opt.dry_run) {
        print_dry_run(config, pipeline_stages(config));
        return kOk;
      }
      const MetricsReport report = run_experiment(config, lc.text, paths, log_line);
      std::cout << report.to_json().dump(2) << "\n";
      return kOk;
    }

    std::string name;
    for (const auto& [n, cmd] : cmds) {
      if (cmd->parsed()) name = n;
    }
    if (opt.dry_run) {
      print_dry_run(config, {name});
      return kOk;
    }
    record_config(paths, lc);

    if (name == "gen-data") {
      save_splits(paths, generate_data(config));
    } else if (name == "train-score") {
      train_score_stage(config, data_for(paths, config), &paths);
    } else if (name == "train-classifier") {
      std::optional<ScoreNet> external;
      if (config.weights.lambda_dlsm > 0.0) {
        external = score_net_from_checkpoint(read_json_file(paths.checkpoint(kScoreStage)));
      }
      if (!uses_classifier(config.preset)) throw Error(ErrorCode::Config, "preset has no classifier");
      train_classifier_stage(config, data_for(paths, config), external ? &*external : nullptr, &paths);
    } else if (name == "train-cond") {
      if (!uses_cond_net(config.preset)) throw Error(ErrorCode::Config, "preset has no conditional score net");
      train_cond_stage(config, data_for(paths, config), &paths);
    } else if (name == "sample") {
      const TrainedModels models = load_models(config, paths);
      write_text_file(paths.samples(), samples_to_csv(sample_stage(config, models)));
    } else if (name == "eval") {
      const ToySplits data = load_splits(paths);
      const TrainedModels models = load_models(config, paths);
      const SampleSet samples = sample_stage(config, models);
      write_text_file(paths.fields(), field_to_csv(field_stage(config, models)));
      const MetricsReport report = evaluate_stage(config, data, models, samples);
      write_text_file(paths.metrics(), report.to_json().dump(2) + "\n");
      std::cout << report.to_json().dump(2) << "\n";
    }
    return kOk;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
