#include "selfcal/models/cond_score_net.hpp"

#include "selfcal/error.hpp"

#include <cmath>

namespace selfcal {

using diff::Dual;
using diff::Matrix;
using diff::Tape;
using diff::Var;

CondScoreNet make_cond_score_net(const NoiseSchedule& schedule, const NetConfig& config, int num_classes, Rng& rng) {
  schedule.validate();
  config.validate();
  if (num_classes < 1) throw Error(ErrorCode::InvalidArgument, "conditional net needs at least one class");
  CondScoreNet net{schedule, config, num_classes, {}};
  init_mlp(net.params, config, 2, rng);
  std::normal_distribution<double> normal(0.0, 0.1);
  for (int layer = 0; layer < config.depth; ++layer) {
    Matrix table(num_classes + 1, config.hidden);
    for (Eigen::Index k = 0; k < table.size(); ++k) table.data()[k] = normal(rng);
    net.params.add("embed.l" + std::to_string(layer), std::move(table));
  }
  return net;
}

std::vector<int> embedding_rows(const CondScoreNet& net, const Labels& labels) {
  std::vector<int> rows(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y == kUnlabeled) {
      rows[i] = net.null_row();
    } else if (y >= 0 && y < net.num_classes) {
      rows[i] = y;
    } else {
      throw Error(ErrorCode::InvalidArgument, "label " + std::to_string(y) + " out of range");
    }
  }
  return rows;
}

namespace {

std::vector<Var> offsets(std::span<const Var> vars, const CondScoreNet& net, const Labels& labels) {
  const std::size_t first = static_cast<std::size_t>(2 * (net.config.depth + 1));
  const std::vector<int> rows = embedding_rows(net, labels);
  std::vector<Var> out;
  for (int layer = 0; layer < net.config.depth; ++layer) {
    out.push_back(diff::gather_rows(vars[first + static_cast<std::size_t>(layer)], rows));
  }
  return out;
}

}  // namespace

Var cond_score_forward(std::span<const Var> vars, const CondScoreNet& net, const Points& x, const Labels& labels,
                       const Eigen::VectorXd& t) {
  Tape& tape = vars.front().tape();
  const std::vector<Var> off = offsets(vars, net, labels);
  const Var raw = mlp_forward(vars, net.config, network_input_value(tape, net.schedule, net.config, x, t), off);
  return diff::mul_col(raw, tape.constant(net.schedule.sigma(t).cwiseInverse()));
}

Dual cond_score_forward_dual(std::span<const Var> vars, const CondScoreNet& net, const Points& x,
                             const Labels& labels, const Eigen::VectorXd& t) {
  Tape& tape = vars.front().tape();
  const std::vector<Var> off = offsets(vars, net, labels);
  const Dual raw = mlp_forward(vars, net.config, network_input(tape, net.schedule, net.config, x, t), off);
  const Var inv = tape.constant(net.schedule.sigma(t).cwiseInverse());
  return {diff::mul_col(raw.value, inv), {diff::mul_col(raw.tangent[0], inv), diff::mul_col(raw.tangent[1], inv)}};
}

Points cond_score_eval(const CondScoreNet& net, const Points& x, const Labels& labels, double t) {
  Tape tape;
  const auto vars = diff::bind(tape, net.params, false);
  return cond_score_forward(vars, net, x, labels, broadcast_time(t, x.rows())).value();
}

Points cond_score_eval(const CondScoreNet& net, const Points& x, int label, double t) {
  return cond_score_eval(net, x, Labels(static_cast<std::size_t>(x.rows()), label), t);
}

Eigen::Matrix2d cond_score_jacobian(const CondScoreNet& net, const Point& x, int label, double t) {
  Tape tape;
  const auto vars = diff::bind(tape, net.params, false);
  Points p(1, 2);
  p.row(0) = x.transpose();
  const Dual out = cond_score_forward_dual(vars, net, p, Labels{label}, broadcast_time(t, 1));
  Eigen::Matrix2d jac;
  jac.col(0) = out.tangent[0].value().row(0).transpose();
  jac.col(1) = out.tangent[1].value().row(0).transpose();
  return jac;
}

}  // namespace selfcal
