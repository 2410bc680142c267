#pragma once

#include "selfcal/models/classifier.hpp"
#include "selfcal/models/cond_score_net.hpp"
#include "selfcal/models/gmm.hpp"
#include "selfcal/models/score_net.hpp"
#include "selfcal/sde.hpp"

#include <optional>
#include <string>
#include <vector>

namespace selfcal {

enum class GuidanceMode { Cg, Cfg, Cond, ClassifierOnlyCond, ClassifierOnlyUncond };

const char* to_string(GuidanceMode mode);
GuidanceMode guidance_mode_from_string(const std::string& name);

struct GuidanceConfig {
  double lambda_cg = 1.0;
  double lambda_cfg = 0.0;
  GuidanceMode mode = GuidanceMode::Cg;

  void validate() const;
};

// Sweep grids used when tuning the guidance scales.
inline const std::vector<double> kLambdaCgSweep = {0.5, 0.8, 1.0, 1.2, 1.5, 2.0, 2.5};
inline const std::vector<double> kLambdaCfgSweep = {0.0, 0.1, 0.2, 0.4};

// s(x, t; theta) + lambda_cg * grad_x log p(y | x, t; phi).
Points guided_score(const ScoreNet& score, const Classifier& cls, const Points& x, int label, double t,
                    double lambda_cg);
// (1 + lambda_cfg) s(x, y, t) - lambda_cfg s(x, null, t).
Points cfg_score(const CondScoreNet& net, const Points& x, int label, double t, double lambda_cfg);
// Without a label: the classifier's internal score. With a label:
// grad_x f(x, y, t), the logit gradient.
Points classifier_only_scores(const Classifier& cls, const Points& x, double t, std::optional<int> label);

// Oracle counterpart of guided_score for the analytic mixture.
Points oracle_guided_score(const GmmSpec& spec, const NoiseSchedule& schedule, const Points& x, int label, double t,
                           double lambda_cg);

// Models available to a sampling run; unused ones may be null.
struct GuidanceModels {
  const ScoreNet* score = nullptr;
  const Classifier* classifier = nullptr;
  const CondScoreNet* cond = nullptr;
};

// Score closure for pc_sample. `label` is ignored by the unconditional mode.
ScoreFn make_guided_score_fn(const GuidanceModels& models, const GuidanceConfig& config, int label);

}  // namespace selfcal
