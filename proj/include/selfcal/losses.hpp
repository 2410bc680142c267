#pragma once

#include "selfcal/diffmath/tape.hpp"
#include "selfcal/models/classifier.hpp"
#include "selfcal/models/cond_score_net.hpp"
#include "selfcal/models/score_net.hpp"
#include "selfcal/sde.hpp"
#include "selfcal/types.hpp"

#include <functional>
#include <map>
#include <span>
#include <string>

namespace selfcal {

// Coefficients of the regularizers mixed into classifier training. The
// cross-entropy term always has weight 1.
struct LossWeights {
  double lambda_sc = 0.0;
  double lambda_dlsm = 0.0;
  double lambda_jr = 0.0;
  double label_smoothing_eps = 0.0;
  double lambda_jem = 0.0;

  void validate() const;
};

struct SgldConfig {
  int steps = 20;
  // Per-step update x <- x - step_size * sigma(t)^2 * grad E + noise_scale * sigma(t) * z.
  // noise_scale = sqrt(2 * step_size) is exact Langevin.
  double step_size = 0.05;
  double noise_scale = 0.31622776601683794;

  void validate() const;
};

// A batch of clean points, their perturbed versions and DSM targets.
struct PerturbedBatch {
  Points x0 = Points(0, 2);
  Labels labels;
  Eigen::VectorXd t;
  Points xt = Points(0, 2);
  Points target = Points(0, 2);  // kernel score s_t(x_t | x_0)
  Eigen::VectorXd weight;        // lambda(t) = sigma(t)^2

  Eigen::Index size() const { return x0.rows(); }
  bool fully_labeled() const;
  void validate() const;
};

// Draws t ~ U[t_min, T] per row and Gaussian noise, then perturbs.
PerturbedBatch make_perturbed_batch(const NoiseSchedule& schedule, const Points& x0, const Labels& labels,
                                    Rng& time_rng, Rng& noise_rng, double t_min = kTrainEps);
// Deterministic variant with explicit times and standard-normal noise.
PerturbedBatch make_perturbed_batch(const NoiseSchedule& schedule, const Points& x0, const Labels& labels,
                                    const Eigen::VectorXd& t, const Points& noise);
// First n rows.
PerturbedBatch head(const PerturbedBatch& batch, Eigen::Index n);

// --- tape builders; `vars` are the bound parameters of the model ----------

diff::Var dsm_loss(std::span<const diff::Var> vars, const ScoreNet& net, const PerturbedBatch& batch);
// Conditional DSM; rows labelled kUnlabeled use the null token.
diff::Var cond_dsm_loss(std::span<const diff::Var> vars, const CondScoreNet& net, const PerturbedBatch& batch);
diff::Var ce_loss(std::span<const diff::Var> vars, const Classifier& cls, const PerturbedBatch& batch);
diff::Var ls_ce_loss(std::span<const diff::Var> vars, const Classifier& cls, const PerturbedBatch& batch, double eps);
diff::Var sc_loss(std::span<const diff::Var> vars, const Classifier& cls, const PerturbedBatch& batch);
// The external score enters as a constant: no gradient reaches its parameters.
diff::Var dlsm_loss(std::span<const diff::Var> cls_vars, const Classifier& cls, std::span<const diff::Var> score_vars,
                    const ScoreNet& score, const PerturbedBatch& batch);
diff::Var dlsm_loss(std::span<const diff::Var> cls_vars, const Classifier& cls, const ScoreNet& score,
                    const PerturbedBatch& batch);
diff::Var jacobian_reg_loss(std::span<const diff::Var> vars, const Classifier& cls, const PerturbedBatch& batch);
diff::Var jem_loss(std::span<const diff::Var> vars, const Classifier& cls, const PerturbedBatch& batch,
                   const SgldConfig& sgld, Rng& rng);

// Everything the classifier objective may need beyond its own parameters.
struct ClassifierLossContext {
  const ScoreNet* external_score = nullptr;  // required when lambda_dlsm > 0
  SgldConfig sgld;
  Rng* sgld_rng = nullptr;                   // required when lambda_jem > 0
};

struct ClassifierLossTerms {
  diff::Var total;
  std::map<std::string, diff::Var> components;  // unweighted terms
};

// CE (or label-smoothed CE) on the labeled batch + lambda_sc * SC on the full
// batch + the enabled baseline terms on the labeled batch.
ClassifierLossTerms total_classifier_loss(std::span<const diff::Var> vars, const Classifier& cls,
                                          const PerturbedBatch& labeled, const PerturbedBatch& all,
                                          const LossWeights& weights, const ClassifierLossContext& context);

// --- eager values -----------------------------------------------------------

double dsm_loss(const ScoreNet& net, const PerturbedBatch& batch);
double cond_dsm_loss(const CondScoreNet& net, const PerturbedBatch& batch);
double ce_loss(const Classifier& cls, const PerturbedBatch& batch);
double ls_ce_loss(const Classifier& cls, const PerturbedBatch& batch, double eps);
double sc_loss(const Classifier& cls, const PerturbedBatch& batch);
double dlsm_loss(const Classifier& cls, const ScoreNet& score, const PerturbedBatch& batch);
double jacobian_reg_loss(const Classifier& cls, const PerturbedBatch& batch);
double jem_loss(const Classifier& cls, const PerturbedBatch& batch, const SgldConfig& sgld, Rng& rng);
double total_classifier_loss(const Classifier& cls, const PerturbedBatch& labeled, const PerturbedBatch& all,
                             const LossWeights& weights, const ClassifierLossContext& context);

// Short-run Langevin on an energy given through its gradient. `scale` holds a
// per-row length scale (sigma(t) for time-dependent energies, ones otherwise).
using EnergyGradFn = std::function<Points(const Points& x)>;
Points sgld_chain(const EnergyGradFn& grad_energy, const Points& init, const Eigen::VectorXd& scale,
                  const SgldConfig& config, Rng& rng);

}  // namespace selfcal
