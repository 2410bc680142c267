#pragma once

#include "selfcal/diffmath/params.hpp"
#include "selfcal/models/mlp.hpp"
#include "selfcal/sde.hpp"

#include <span>

namespace selfcal {

// Unconditional time-conditioned score network s(x, t; theta). The MLP output
// is divided by sigma(t), so the raw network predicts a unit-scale quantity.
struct ScoreNet {
  NoiseSchedule schedule;
  NetConfig config;
  diff::ParamSet params;
};

ScoreNet make_score_net(const NoiseSchedule& schedule, const NetConfig& config, Rng& rng);

// rows x 2 score node; `vars` are the bound params of `net`.
diff::Var score_net_forward(std::span<const diff::Var> vars, const ScoreNet& net, const Points& x,
                            const Eigen::VectorXd& t);
// Score with its x-tangents (used for Jacobian checks).
diff::Dual score_net_forward_dual(std::span<const diff::Var> vars, const ScoreNet& net, const Points& x,
                                  const Eigen::VectorXd& t);

Points score_net_eval(const ScoreNet& net, const Points& x, const Eigen::VectorXd& t);
Points score_net_eval(const ScoreNet& net, const Points& x, double t);
Point score_net_eval(const ScoreNet& net, const Point& x, double t);

// d s / d x at one point; column k is the derivative along axis k.
Eigen::Matrix2d score_net_jacobian(const ScoreNet& net, const Point& x, double t);

}  // namespace selfcal
