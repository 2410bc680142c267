#include "selfcal/guidance.hpp"

#include "selfcal/error.hpp"

namespace selfcal {

const char* to_string(GuidanceMode mode) {
  switch (mode) {
    case GuidanceMode::Cg: return "cg";
    case GuidanceMode::Cfg: return "cfg";
    case GuidanceMode::Cond: return "cond";
    case GuidanceMode::ClassifierOnlyCond: return "classifier-only-cond";
    case GuidanceMode::ClassifierOnlyUncond: return "classifier-only-uncond";
  }
  return "?";
}

GuidanceMode guidance_mode_from_string(const std::string& name) {
  if (name == "cg") return GuidanceMode::Cg;
  if (name == "cfg") return GuidanceMode::Cfg;
  if (name == "cond") return GuidanceMode::Cond;
  if (name == "classifier-only-cond") return GuidanceMode::ClassifierOnlyCond;
  if (name == "classifier-only-uncond") return GuidanceMode::ClassifierOnlyUncond;
  throw Error(ErrorCode::InvalidArgument, "unknown guidance mode '" + name + "'");
}

void GuidanceConfig::validate() const {
  if (!(lambda_cg >= 0.0) || !(lambda_cfg >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "guidance scales must be non-negative");
  }
}

Points guided_score(const ScoreNet& score, const Classifier& cls, const Points& x, int label, double t,
                    double lambda_cg) {
  Points s = score_net_eval(score, x, t);
  if (lambda_cg != 0.0) s += lambda_cg * posterior_log_grad(cls, x, label, t);
  return s;
}

Points cfg_score(const CondScoreNet& net, const Points& x, int label, double t, double lambda_cfg) {
  const Points cond = cond_score_eval(net, x, label, t);
  if (lambda_cfg == 0.0) return cond;
  const Points null = cond_score_eval(net, x, kUnlabeled, t);
  return (1.0 + lambda_cfg) * cond - lambda_cfg * null;
}

Points classifier_only_scores(const Classifier& cls, const Points& x, double t, std::optional<int> label) {
  const ClassifierEval eval = classifier_eval(cls, x, broadcast_time(t, x.rows()));
  return label ? logit_grad(eval, *label) : internal_score(eval);
}

Points oracle_guided_score(const GmmSpec& spec, const NoiseSchedule& schedule, const Points& x, int label, double t,
                           double lambda_cg) {
  const double s = schedule.sigma(t);
  Points out(x.rows(), 2);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const OracleScores o = gmm_oracle_scores(spec, x.row(i).transpose(), s * s);
    out.row(i) = (o.unconditional + lambda_cg * o.posterior_grad[static_cast<std::size_t>(label)]).transpose();
  }
  return out;
}

namespace {

template <typename T>
const T& require(const T* p, const char* what) {
  if (p == nullptr) throw Error(ErrorCode::InvalidArgument, std::string("guidance mode needs a ") + what);
  return *p;
}

}  // namespace

ScoreFn make_guided_score_fn(const GuidanceModels& models, const GuidanceConfig& config, int label) {
  config.validate();
  switch (config.mode) {
    case GuidanceMode::Cg: {
      const ScoreNet& score = require(models.score, "score network");
      const Classifier& cls = require(models.classifier, "classifier");
      const double lambda = config.lambda_cg;
      return [&score, &cls, label, lambda](const Points& x, double t) {
        return guided_score(score, cls, x, label, t, lambda);
      };
    }
    case GuidanceMode::Cfg: {
      const CondScoreNet& net = require(models.cond, "conditional score network");
      const double lambda = config.lambda_cfg;
      return [&net, label, lambda](const Points& x, double t) { return cfg_score(net, x, label, t, lambda); };
    }
    case GuidanceMode::Cond: {
      const CondScoreNet& net = require(models.cond, "conditional score network");
      return [&net, label](const Points& x, double t) { return cond_score_eval(net, x, label, t); };
    }
    case GuidanceMode::ClassifierOnlyCond: {
      const Classifier& cls = require(models.classifier, "classifier");
      return [&cls, label](const Points& x, double t) { return classifier_only_scores(cls, x, t, label); };
    }
    case GuidanceMode::ClassifierOnlyUncond: {
      const Classifier& cls = require(models.classifier, "classifier");
      return [&cls](const Points& x, double t) { return classifier_only_scores(cls, x, t, std::nullopt); };
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unhandled guidance mode");
}

}  // namespace selfcal
