#include "selfcal/losses.hpp"

#include "selfcal/diffmath/gradient.hpp"
#include "selfcal/error.hpp"

#include <algorithm>
#include <cmath>

namespace selfcal {

using diff::Dual;
using diff::Matrix;
using diff::Tape;
using diff::Var;

void LossWeights::validate() const {
  if (lambda_sc < 0 || lambda_dlsm < 0 || lambda_jr < 0 || lambda_jem < 0) {
    throw Error(ErrorCode::InvalidArgument, "loss weights must be non-negative");
  }
  if (!(label_smoothing_eps >= 0.0 && label_smoothing_eps < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "label_smoothing_eps must lie in [0, 1)");
  }
}

void SgldConfig::validate() const {
  if (steps < 1) throw Error(ErrorCode::InvalidArgument, "sgld steps must be >= 1");
  if (step_size < 0 || noise_scale < 0) throw Error(ErrorCode::InvalidArgument, "sgld step/noise must be >= 0");
}

bool PerturbedBatch::fully_labeled() const {
  return std::none_of(labels.begin(), labels.end(), [](int y) { return y == kUnlabeled; });
}

void PerturbedBatch::validate() const {
  const Eigen::Index n = size();
  if (n == 0) throw Error(ErrorCode::EmptyBatch, "batch has no elements");
  if (static_cast<Eigen::Index>(labels.size()) != n || t.size() != n || xt.rows() != n || target.rows() != n ||
      weight.size() != n) {
    throw Error(ErrorCode::InvalidArgument, "perturbed batch fields differ in length");
  }
}

PerturbedBatch make_perturbed_batch(const NoiseSchedule& schedule, const Points& x0, const Labels& labels,
                                    const Eigen::VectorXd& t, const Points& noise) {
  if (static_cast<Eigen::Index>(labels.size()) != x0.rows()) {
    throw Error(ErrorCode::InvalidArgument, "one label per point required");
  }
  PerturbedBatch b;
  b.x0 = x0;
  b.labels = labels;
  b.t = t;
  b.xt = perturb(schedule, x0, t, noise);
  b.target = kernel_score(schedule, b.xt, x0, t);
  b.weight = schedule.sigma(t).array().square().matrix();
  return b;
}

PerturbedBatch make_perturbed_batch(const NoiseSchedule& schedule, const Points& x0, const Labels& labels,
                                    Rng& time_rng, Rng& noise_rng, double t_min) {
  std::uniform_real_distribution<double> uniform(t_min, schedule.horizon);
  Eigen::VectorXd t(x0.rows());
  for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = uniform(time_rng);
  return make_perturbed_batch(schedule, x0, labels, t, standard_normal_points(x0.rows(), noise_rng));
}

PerturbedBatch head(const PerturbedBatch& batch, Eigen::Index n) {
  if (n > batch.size()) throw Error(ErrorCode::InvalidArgument, "head: n exceeds batch size");
  PerturbedBatch b;
  b.x0 = batch.x0.topRows(n);
  b.labels.assign(batch.labels.begin(), batch.labels.begin() + n);
  b.t = batch.t.head(n);
  b.xt = batch.xt.topRows(n);
  b.target = batch.target.topRows(n);
  b.weight = batch.weight.head(n);
  return b;
}

namespace {

Tape& tape_of(std::span<const Var> vars) {
  if (vars.empty()) throw Error(ErrorCode::InvalidArgument, "no parameters bound");
  return vars.front().tape();
}

// mean_i w_i / 2 * ||pred_i - target_i||^2
Var weighted_residual(Var pred, const PerturbedBatch& batch) {
  Tape& tape = pred.tape();
  const Var residual = pred - tape.constant(batch.target);
  const Var sq = diff::squared_norm_rows(residual);
  return diff::mean(diff::mul_col(sq, tape.constant(0.5 * batch.weight)));
}

void require_labels(const PerturbedBatch& batch, ErrorCode code, int num_classes) {
  for (int y : batch.labels) {
    if (y == kUnlabeled) throw Error(code, "batch contains an unlabeled element");
    if (y < 0 || y >= num_classes) throw Error(ErrorCode::InvalidArgument, "label out of range");
  }
}

}  // namespace

Var dsm_loss(std::span<const Var> vars, const ScoreNet& net, const PerturbedBatch& batch) {
  batch.validate();
  return weighted_residual(score_net_forward(vars, net, batch.xt, batch.t), batch);
}

Var cond_dsm_loss(std::span<const Var> vars, const CondScoreNet& net, const PerturbedBatch& batch) {
  batch.validate();
  return weighted_residual(cond_score_forward(vars, net, batch.xt, batch.labels, batch.t), batch);
}

Var ce_loss(std::span<const Var> vars, const Classifier& cls, const PerturbedBatch& batch) {
  batch.validate();
  require_labels(batch, ErrorCode::UnlabeledInCe, cls.num_classes);
  const Var logp = log_softmax_node(classifier_logits_node(vars, cls, batch.xt, batch.t));
  return -diff::mean(diff::pick(logp, batch.labels));
}

Var ls_ce_loss(std::span<const Var> vars, const Classifier& cls, const PerturbedBatch& batch, double eps) {
  batch.validate();
  require_labels(batch, ErrorCode::UnlabeledInCe, cls.num_classes);
  if (!(eps >= 0.0 && eps < 1.0)) throw Error(ErrorCode::InvalidArgument, "smoothing eps must lie in [0, 1)");
  const Var logp = log_softmax_node(classifier_logits_node(vars, cls, batch.xt, batch.t));
  // Targets (1 - eps) * onehot + eps / K.
  const Var hard = -diff::mean(diff::pick(logp, batch.labels));
  const Var uniform = -diff::mean(diff::sum_rows(logp));
  return (1.0 - eps) * hard + (eps / cls.num_classes) * uniform;
}

Var sc_loss(std::span<const Var> vars, const Classifier& cls, const PerturbedBatch& batch) {
  batch.validate();
  const Dual logits = classifier_forward(vars, cls, batch.xt, batch.t);
  return weighted_residual(internal_score_node(logits), batch);
}

Var dlsm_loss(std::span<const Var> cls_vars, const Classifier& cls, std::span<const Var> score_vars,
              const ScoreNet& score, const PerturbedBatch& batch) {
  batch.validate();
  require_labels(batch, ErrorCode::UnlabeledInDlsm, cls.num_classes);
  Tape& tape = tape_of(cls_vars);
  // Stop-gradient on the external score.
  const Var external = tape.constant(score_net_forward(score_vars, score, batch.xt, batch.t).value());
  const Dual logits = classifier_forward(cls_vars, cls, batch.xt, batch.t);
  return weighted_residual(posterior_log_grad_node(logits, batch.labels) + external, batch);
}

Var dlsm_loss(std::span<const Var> cls_vars, const Classifier& cls, const ScoreNet& score,
              const PerturbedBatch& batch) {
  Tape& tape = tape_of(cls_vars);
  const auto score_vars = diff::bind(tape, score.params, false);
  return dlsm_loss(cls_vars, cls, score_vars, score, batch);
}

Var jacobian_reg_loss(std::span<const Var> vars, const Classifier& cls, const PerturbedBatch& batch) {
  batch.validate();
  const Dual logits = classifier_forward(vars, cls, batch.xt, batch.t);
  const Var frob = diff::squared_norm_rows(logits.tangent[0]) + diff::squared_norm_rows(logits.tangent[1]);
  return diff::mean(frob);
}

Points sgld_chain(const EnergyGradFn& grad_energy, const Points& init, const Eigen::VectorXd& scale,
                  const SgldConfig& config, Rng& rng) {
  config.validate();
  if (scale.size() != init.rows()) throw Error(ErrorCode::InvalidArgument, "sgld: one scale per row required");
  Points x = init;
  const Eigen::ArrayXd var = scale.array().square();
  for (int step = 0; step < config.steps; ++step) {
    const Points g = grad_energy(x);
    const Points z = standard_normal_points(x.rows(), rng);
    x -= config.step_size * (g.array().colwise() * var).matrix();
    x += config.noise_scale * (z.array().colwise() * scale.array()).matrix();
    if (!x.allFinite()) throw Error(ErrorCode::SgldDiverged, "non-finite SGLD sample at step " + std::to_string(step));
  }
  return x;
}

Var jem_loss(std::span<const Var> vars, const Classifier& cls, const PerturbedBatch& batch, const SgldConfig& sgld,
             Rng& rng) {
  batch.validate();
  // grad_x E = -internal score, evaluated with the current parameters held fixed.
  const EnergyGradFn grad_energy = [&](const Points& x) -> Points {
    Tape inner;
    std::vector<Var> frozen;
    for (const Var& v : vars) frozen.push_back(inner.constant(v.value()));
    return -internal_score_node(classifier_forward(frozen, cls, x, batch.t)).value();
  };
  const Points negatives = sgld_chain(grad_energy, batch.xt, cls.schedule.sigma(batch.t), sgld, rng);
  const Var e_pos = -diff::logsumexp_rows(classifier_logits_node(vars, cls, batch.xt, batch.t));
  const Var e_neg = -diff::logsumexp_rows(classifier_logits_node(vars, cls, negatives, batch.t));
  return diff::mean(e_pos) - diff::mean(e_neg);
}

ClassifierLossTerms total_classifier_loss(std::span<const Var> vars, const Classifier& cls,
                                          const PerturbedBatch& labeled, const PerturbedBatch& all,
                                          const LossWeights& weights, const ClassifierLossContext& context) {
  weights.validate();
  ClassifierLossTerms terms;
  const Var ce = weights.label_smoothing_eps > 0.0 ? ls_ce_loss(vars, cls, labeled, weights.label_smoothing_eps)
                                                   : ce_loss(vars, cls, labeled);
  terms.components.emplace(weights.label_smoothing_eps > 0.0 ? "ls_ce" : "ce", ce);
  Var total = ce;
  if (weights.lambda_sc > 0.0) {
    const Var sc = sc_loss(vars, cls, all);
    terms.components.emplace("sc", sc);
    total = total + weights.lambda_sc * sc;
  }
  if (weights.lambda_dlsm > 0.0) {
    if (context.external_score == nullptr) throw Error(ErrorCode::InvalidArgument, "DLSM needs an external score net");
    const Var dlsm = dlsm_loss(vars, cls, *context.external_score, labeled);
    terms.components.emplace("dlsm", dlsm);
    total = total + weights.lambda_dlsm * dlsm;
  }
  if (weights.lambda_jr > 0.0) {
    const Var jr = jacobian_reg_loss(vars, cls, labeled);
    terms.components.emplace("jr", jr);
    total = total + weights.lambda_jr * jr;
  }
  if (weights.lambda_jem > 0.0) {
    if (context.sgld_rng == nullptr) throw Error(ErrorCode::InvalidArgument, "JEM needs an SGLD random stream");
    const Var jem = jem_loss(vars, cls, labeled, context.sgld, *context.sgld_rng);
    terms.components.emplace("jem", jem);
    total = total + weights.lambda_jem * jem;
  }
  terms.total = total;
  return terms;
}

// --- eager ------------------------------------------------------------------

double dsm_loss(const ScoreNet& net, const PerturbedBatch& batch) {
  return diff::evaluate([&](Tape&, std::span<const Var> v) { return dsm_loss(v, net, batch); }, net.params);
}

double cond_dsm_loss(const CondScoreNet& net, const PerturbedBatch& batch) {
  return diff::evaluate([&](Tape&, std::span<const Var> v) { return cond_dsm_loss(v, net, batch); }, net.params);
}

double ce_loss(const Classifier& cls, const PerturbedBatch& batch) {
  return diff::evaluate([&](Tape&, std::span<const Var> v) { return ce_loss(v, cls, batch); }, cls.params);
}

double ls_ce_loss(const Classifier& cls, const PerturbedBatch& batch, double eps) {
  return diff::evaluate([&](Tape&, std::span<const Var> v) { return ls_ce_loss(v, cls, batch, eps); }, cls.params);
}

double sc_loss(const Classifier& cls, const PerturbedBatch& batch) {
  return diff::evaluate([&](Tape&, std::span<const Var> v) { return sc_loss(v, cls, batch); }, cls.params);
}

double dlsm_loss(const Classifier& cls, const ScoreNet& score, const PerturbedBatch& batch) {
  return diff::evaluate([&](Tape&, std::span<const Var> v) { return dlsm_loss(v, cls, score, batch); }, cls.params);
}

double jacobian_reg_loss(const Classifier& cls, const PerturbedBatch& batch) {
  return diff::evaluate([&](Tape&, std::span<const Var> v) { return jacobian_reg_loss(v, cls, batch); }, cls.params);
}

double jem_loss(const Classifier& cls, const PerturbedBatch& batch, const SgldConfig& sgld, Rng& rng) {
  return diff::evaluate([&](Tape&, std::span<const Var> v) { return jem_loss(v, cls, batch, sgld, rng); },
                        cls.params);
}

double total_classifier_loss(const Classifier& cls, const PerturbedBatch& labeled, const PerturbedBatch& all,
                             const LossWeights& weights, const ClassifierLossContext& context) {
  return diff::evaluate(
      [&](Tape&, std::span<const Var> v) {
        return total_classifier_loss(v, cls, labeled, all, weights, context).total;
      },
      cls.params);
}

}  // namespace selfcal
