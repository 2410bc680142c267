#include "selfcal/models/classifier.hpp"

#include "selfcal/error.hpp"

namespace selfcal {

using diff::Dual;
using diff::Matrix;
using diff::Tape;
using diff::Var;

Classifier make_classifier(const NoiseSchedule& schedule, const NetConfig& config, int num_classes, Rng& rng) {
  schedule.validate();
  config.validate();
  if (num_classes < 1) throw Error(ErrorCode::InvalidArgument, "classifier needs at least one class");
  Classifier cls{schedule, config, num_classes, {}};
  init_mlp(cls.params, config, num_classes, rng);
  return cls;
}

Dual classifier_forward(std::span<const Var> vars, const Classifier& cls, const Points& x, const Eigen::VectorXd& t) {
  Tape& tape = vars.front().tape();
  return mlp_forward(vars, cls.config, network_input(tape, cls.schedule, cls.config, x, t));
}

Var classifier_logits_node(std::span<const Var> vars, const Classifier& cls, const Points& x,
                           const Eigen::VectorXd& t) {
  Tape& tape = vars.front().tape();
  return mlp_forward(vars, cls.config, network_input_value(tape, cls.schedule, cls.config, x, t));
}

Var internal_score_node(const Dual& logits) { return diff::gradient_rows(diff::logsumexp_rows(logits)); }

Var logit_grad_node(const Dual& logits, const Labels& labels) {
  return diff::concat_cols(diff::pick(logits.tangent[0], labels), diff::pick(logits.tangent[1], labels));
}

Var posterior_log_grad_node(const Dual& logits, const Labels& labels) {
  return logit_grad_node(logits, labels) - internal_score_node(logits);
}

Var log_softmax_node(Var logits) { return diff::add_col(logits, -diff::logsumexp_rows(logits)); }

ClassifierEval classifier_eval(const Classifier& cls, const Points& x, const Eigen::VectorXd& t) {
  Tape tape;
  const auto vars = diff::bind(tape, cls.params, false);
  const Dual out = classifier_forward(vars, cls, x, t);
  return {out.value.value(), {out.tangent[0].value(), out.tangent[1].value()}};
}

namespace {

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

void check_label(const ClassifierEval& eval, int label) {
  if (label < 0 || label >= eval.logits.cols()) throw Error(ErrorCode::InvalidArgument, "class index out of range");
}

}  // namespace

Matrix classifier_logits(const Classifier& cls, const Points& x, double t) {
  Tape tape;
  const auto vars = diff::bind(tape, cls.params, false);
  return classifier_logits_node(vars, cls, x, broadcast_time(t, x.rows())).value();
}

Matrix classifier_posterior(const Classifier& cls, const Points& x, double t) {
  return softmax(classifier_logits(cls, x, t));
}

Eigen::VectorXd energy(const Classifier& cls, const Points& x, double t) {
  Tape tape;
  const Var logits = tape.constant(classifier_logits(cls, x, t));
  return -diff::logsumexp_rows(logits).value().col(0);
}

Points internal_score(const ClassifierEval& eval) {
  const Matrix p = softmax(eval.logits);
  Points s(eval.logits.rows(), 2);
  for (int k = 0; k < 2; ++k) s.col(k) = p.cwiseProduct(eval.dlogits[static_cast<std::size_t>(k)]).rowwise().sum();
  return s;
}

Points logit_grad(const ClassifierEval& eval, int label) {
  check_label(eval, label);
  Points g(eval.logits.rows(), 2);
  g.col(0) = eval.dlogits[0].col(label);
  g.col(1) = eval.dlogits[1].col(label);
  return g;
}

Points posterior_log_grad(const ClassifierEval& eval, int label) {
  return logit_grad(eval, label) - internal_score(eval);
}

Points internal_score(const Classifier& cls, const Points& x, double t) {
  return internal_score(classifier_eval(cls, x, broadcast_time(t, x.rows())));
}

Points posterior_log_grad(const Classifier& cls, const Points& x, const Labels& labels, double t) {
  Tape tape;
  const auto vars = diff::bind(tape, cls.params, false);
  const Dual logits = classifier_forward(vars, cls, x, broadcast_time(t, x.rows()));
  return posterior_log_grad_node(logits, labels).value();
}

Points posterior_log_grad(const Classifier& cls, const Points& x, int label, double t) {
  return posterior_log_grad(classifier_eval(cls, x, broadcast_time(t, x.rows())), label);
}

Points logit_grad(const Classifier& cls, const Points& x, int label, double t) {
  return logit_grad(classifier_eval(cls, x, broadcast_time(t, x.rows())), label);
}

}  // namespace selfcal
