#pragma once

#include "selfcal/diffmath/dual.hpp"
#include "selfcal/diffmath/params.hpp"
#include "selfcal/models/mlp.hpp"
#include "selfcal/sde.hpp"

#include <span>

namespace selfcal {

// Time-dependent classifier f(x, y, t; phi) producing num_classes logits.
// Read as an energy model, E(x, t) = -logsumexp_y f and its internal score
// is -grad_x E.
struct Classifier {
  NoiseSchedule schedule;
  NetConfig config;
  int num_classes = 2;
  diff::ParamSet params;
};

Classifier make_classifier(const NoiseSchedule& schedule, const NetConfig& config, int num_classes, Rng& rng);

// Logits with their x-tangents, rows x num_classes each.
diff::Dual classifier_forward(std::span<const diff::Var> vars, const Classifier& cls, const Points& x,
                              const Eigen::VectorXd& t);
diff::Var classifier_logits_node(std::span<const diff::Var> vars, const Classifier& cls, const Points& x,
                                 const Eigen::VectorXd& t);

// Building blocks over a dual of logits; each returns a tape node so losses
// built from them stay differentiable in phi.
diff::Var internal_score_node(const diff::Dual& logits);                          // rows x 2
diff::Var logit_grad_node(const diff::Dual& logits, const Labels& labels);        // rows x 2
diff::Var posterior_log_grad_node(const diff::Dual& logits, const Labels& labels);  // rows x 2
diff::Var log_softmax_node(diff::Var logits);                                      // rows x K

// Eager evaluation with parameters held constant.
struct ClassifierEval {
  diff::Matrix logits;                     // rows x K
  std::array<diff::Matrix, 2> dlogits;     // d logits / d x_k, rows x K
};
ClassifierEval classifier_eval(const Classifier& cls, const Points& x, const Eigen::VectorXd& t);

diff::Matrix classifier_logits(const Classifier& cls, const Points& x, double t);
diff::Matrix classifier_posterior(const Classifier& cls, const Points& x, double t);
Eigen::VectorXd energy(const Classifier& cls, const Points& x, double t);
Points internal_score(const Classifier& cls, const Points& x, double t);
// grad_x log p(y | x, t) for each row's label.
Points posterior_log_grad(const Classifier& cls, const Points& x, const Labels& labels, double t);
Points posterior_log_grad(const Classifier& cls, const Points& x, int label, double t);
// grad_x f(x, y, t) for each row's label.
Points logit_grad(const Classifier& cls, const Points& x, int label, double t);

// Same quantities computed from an already evaluated batch.
Points internal_score(const ClassifierEval& eval);
Points logit_grad(const ClassifierEval& eval, int label);
Points posterior_log_grad(const ClassifierEval& eval, int label);

}  // namespace selfcal
