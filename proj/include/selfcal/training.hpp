#pragma once

#include "selfcal/data.hpp"
#include "selfcal/diffmath/params.hpp"
#include "selfcal/error.hpp"
#include "selfcal/losses.hpp"
#include "selfcal/models/classifier.hpp"
#include "selfcal/models/cond_score_net.hpp"
#include "selfcal/models/score_net.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace selfcal {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const AdamConfig& config, Eigen::Index n_params);

  void step(diff::ParamSet& params, const diff::ParamSet& grad);
  int steps_taken() const { return t_; }

 private:
  AdamConfig config_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  int t_ = 0;
};

struct TrainConfig {
  int batch_size = 128;
  int steps = 2000;
  AdamConfig adam;
  std::uint64_t seed = 0;
  NetConfig net;
  // Invoke the progress callback every this many steps (0 disables it).
  int eval_every = 0;

  void validate() const;
};

struct StepRecord {
  int step = 0;
  std::map<std::string, double> losses;
  double wall_ms = 0.0;
};

struct RunLog {
  std::vector<StepRecord> records;

  // One JSON object per line: {"step": ..., "<term>": ..., "wall_ms": ...}.
  std::string to_jsonl() const;
  std::vector<double> series(const std::string& term) const;
};

using ProgressFn = std::function<void(const StepRecord&)>;

// Raised when a loss becomes non-finite. Carries the log so far and the last
// parameters that produced a finite loss.
class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(const std::string& detail, RunLog log, diff::ParamSet last_params)
      : Error(ErrorCode::TrainingDiverged, detail), log_(std::move(log)), last_params_(std::move(last_params)) {}

  const RunLog& log() const { return log_; }
  const diff::ParamSet& last_params() const { return last_params_; }

 private:
  RunLog log_;
  diff::ParamSet last_params_;
};

// Half-labeled batch: batch_size / 2 draws from the labeled pool followed by
// batch_size / 2 from the unlabeled pool (or the labeled pool again when it
// is empty). Draws are without replacement unless a pool is smaller than the
// half size.
struct ComposedBatch {
  Points labeled_x = Points(0, 2);
  Labels labeled_y;
  Points all_x = Points(0, 2);
  Labels all_y;
};

ComposedBatch compose_batch(const Dataset& labeled, const Dataset& unlabeled, int batch_size, Rng& rng);

struct TrainedClassifier {
  Classifier model;
  RunLog log;
};

struct TrainedScoreNet {
  ScoreNet model;
  RunLog log;
};

struct TrainedCondScoreNet {
  CondScoreNet model;
  RunLog log;
};

// Classifier objective per step: CE on the labeled half plus the weighted
// regularizers (SC on the whole composed batch).
TrainedClassifier train_classifier(const TrainConfig& config, const NoiseSchedule& schedule, int num_classes,
                                   const Dataset& labeled, const Dataset& unlabeled, const LossWeights& weights,
                                   const ClassifierLossContext& context = {}, const ProgressFn& progress = {});

// DSM on all points, labels ignored.
TrainedScoreNet train_score(const TrainConfig& config, const NoiseSchedule& schedule, const Points& data,
                            const ProgressFn& progress = {});

enum class CondMode { Cond, CfgLabeled, CfgAll };
const char* to_string(CondMode mode);
CondMode cond_mode_from_string(const std::string& name);

// "cond": conditional DSM on labeled data. "cfg-labeled": labels replaced by
// the null token with probability null_prob. "cfg-all": additionally trains
// the null pathway on the unlabeled pool.
TrainedCondScoreNet train_cond_score(const TrainConfig& config, const NoiseSchedule& schedule, int num_classes,
                                     const Dataset& labeled, const Dataset& unlabeled, CondMode mode,
                                     double null_prob = 0.1, const ProgressFn& progress = {});

}  // namespace selfcal
