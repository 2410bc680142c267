#pragma once

#include "selfcal/data.hpp"
#include "selfcal/eval.hpp"
#include "selfcal/guidance.hpp"
#include "selfcal/losses.hpp"
#include "selfcal/sde.hpp"
#include "selfcal/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace selfcal {

enum class Preset { Cg, CgScLabeled, CgScAll, CgDlsm, CgJem, CgLs, CgJr, Cond, CfgLabeled, CfgAll };

const char* to_string(Preset preset);
Preset preset_from_string(const std::string& name);
const std::vector<Preset>& all_presets();
// Presets that guide an unconditional score net with a classifier.
bool uses_classifier(Preset preset);
// Presets built on the label-conditioned score net.
bool uses_cond_net(Preset preset);

struct EvalConfig {
  GridSpec grid;
  double field_time = 0.0;
  int samples_per_class = 500;
  int k = 5;
  int ece_buckets = kEceBuckets;
};

// Fully resolved experiment. Produced by parse_experiment_config, which fills
// preset defaults and rejects combinations the preset does not allow.
struct ExperimentConfig {
  Preset preset = Preset::Cg;
  std::uint64_t seed = 0;
  ToyDatasetSpec dataset;
  NoiseSchedule schedule;
  TrainConfig score_train;
  TrainConfig classifier_train;
  TrainConfig cond_train;
  double null_prob = 0.1;
  LossWeights weights;
  SgldConfig sgld;
  GuidanceConfig guidance;
  SamplerConfig sampler;
  EvalConfig eval;

  // Reseeds every stage from one root seed.
  void set_seed(std::uint64_t root);
  void validate() const;
};

// Throws Error(Config) with the offending key on unknown keys, bad types or
// preset conflicts.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::json experiment_config_to_json(const ExperimentConfig& config);

// Stage names in execution order, for --dry-run.
std::vector<std::string> pipeline_stages(const ExperimentConfig& config);

// --- run directory layout -------------------------------------------------

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path resolved_config() const { return root / "resolved_config.json"; }
  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path labeled() const { return data_dir() / "train_labeled.csv"; }
  std::filesystem::path unlabeled() const { return data_dir() / "train_unlabeled.csv"; }
  std::filesystem::path test() const { return data_dir() / "test.csv"; }
  std::filesystem::path checkpoint(const std::string& stage) const { return root / "checkpoints" / (stage + ".json"); }
  std::filesystem::path log(const std::string& stage) const { return root / "logs" / (stage + ".jsonl"); }
  std::filesystem::path samples() const { return root / "samples.csv"; }
  std::filesystem::path fields() const { return root / "fields.csv"; }
  std::filesystem::path metrics() const { return root / "metrics.json"; }
};

inline constexpr const char* kScoreStage = "score_net";
inline constexpr const char* kClassifierStage = "classifier";
inline constexpr const char* kCondStage = "cond_score_net";

// --- stages ---------------------------------------------------------------

struct TrainedModels {
  std::optional<ScoreNet> score;
  std::optional<Classifier> classifier;
  std::optional<CondScoreNet> cond;

  GuidanceModels view() const;
};

// Generated samples; labels are kUnlabeled for unconditional generation.
struct SampleSet {
  Points x = Points(0, 2);
  Labels labels;
};

using LogFn = std::function<void(const std::string&)>;

ToySplits generate_data(const ExperimentConfig& config);
void save_splits(const RunPaths& paths, const ToySplits& splits);
ToySplits load_splits(const RunPaths& paths);

// Training stages. On divergence the RunLog and last finite parameters are
// written under `paths` before the error propagates.
ScoreNet train_score_stage(const ExperimentConfig& config, const ToySplits& data, const RunPaths* paths = nullptr);
Classifier train_classifier_stage(const ExperimentConfig& config, const ToySplits& data, const ScoreNet* external,
                                  const RunPaths* paths = nullptr);
CondScoreNet train_cond_stage(const ExperimentConfig& config, const ToySplits& data, const RunPaths* paths = nullptr);

// Checkpoints present under `paths` for the preset.
TrainedModels load_models(const ExperimentConfig& config, const RunPaths& paths);

SampleSet sample_stage(const ExperimentConfig& config, const TrainedModels& models);
// The field written to fields.csv: the classifier's grad log p(y | x) for
// classifier presets, the conditional score otherwise.
GradientField field_stage(const ExperimentConfig& config, const TrainedModels& models);
MetricsReport evaluate_stage(const ExperimentConfig& config, const ToySplits& data, const TrainedModels& models,
                             const SampleSet& samples);

std::string samples_to_csv(const SampleSet& samples);

// Full pipeline into `paths.root`. `config_text` is copied verbatim to
// config.json before anything runs. `shared_score` skips score training.
MetricsReport run_experiment(const ExperimentConfig& config, const std::string& config_text, const RunPaths& paths,
                             const LogFn& log = {}, const ScoreNet* shared_score = nullptr);
// Re-samples and re-evaluates from the checkpoints and data of a finished run.
MetricsReport evaluate_run(const RunPaths& paths);

// --- compare --------------------------------------------------------------

struct CompareRow {
  std::string run;
  std::string preset;
  MetricsReport metrics;
};

std::vector<CompareRow> collect_runs(const std::vector<std::filesystem::path>& run_dirs);
// Columns: run, preset, then the union of metric names in sorted order.
// Missing metrics are empty cells.
std::string compare_to_csv(const std::vector<CompareRow>& rows);
nlohmann::json compare_to_json(const std::vector<CompareRow>& rows);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace selfcal
