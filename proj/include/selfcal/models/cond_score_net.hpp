#pragma once

#include "selfcal/diffmath/params.hpp"
#include "selfcal/models/mlp.hpp"
#include "selfcal/sde.hpp"

#include <span>

namespace selfcal {

// Conditional score network s(x, y, t; theta) with conditional
// normalization: a learned label embedding is added to every hidden
// pre-activation. Embedding tables have num_classes + 1 rows; the last row
// is the null token, selected by label kUnlabeled.
struct CondScoreNet {
  NoiseSchedule schedule;
  NetConfig config;
  int num_classes = 2;
  diff::ParamSet params;

  int null_row() const { return num_classes; }
};

CondScoreNet make_cond_score_net(const NoiseSchedule& schedule, const NetConfig& config, int num_classes, Rng& rng);

// Maps class labels (or kUnlabeled) to embedding rows.
std::vector<int> embedding_rows(const CondScoreNet& net, const Labels& labels);

diff::Var cond_score_forward(std::span<const diff::Var> vars, const CondScoreNet& net, const Points& x,
                             const Labels& labels, const Eigen::VectorXd& t);
diff::Dual cond_score_forward_dual(std::span<const diff::Var> vars, const CondScoreNet& net, const Points& x,
                                   const Labels& labels, const Eigen::VectorXd& t);

Points cond_score_eval(const CondScoreNet& net, const Points& x, const Labels& labels, double t);
Points cond_score_eval(const CondScoreNet& net, const Points& x, int label, double t);
Eigen::Matrix2d cond_score_jacobian(const CondScoreNet& net, const Point& x, int label, double t);

}  // namespace selfcal
