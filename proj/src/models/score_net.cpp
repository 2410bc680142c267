#include "selfcal/models/score_net.hpp"

#include "selfcal/error.hpp"

namespace selfcal {

using diff::Dual;
using diff::Matrix;
using diff::Tape;
using diff::Var;

ScoreNet make_score_net(const NoiseSchedule& schedule, const NetConfig& config, Rng& rng) {
  schedule.validate();
  config.validate();
  ScoreNet net{schedule, config, {}};
  init_mlp(net.params, config, 2, rng);
  return net;
}

namespace {

Var inverse_sigma_column(Tape& tape, const NoiseSchedule& schedule, const Eigen::VectorXd& t) {
  return tape.constant(schedule.sigma(t).cwiseInverse());
}

}  // namespace

Var score_net_forward(std::span<const Var> vars, const ScoreNet& net, const Points& x, const Eigen::VectorXd& t) {
  Tape& tape = vars.front().tape();
  const Var in = network_input_value(tape, net.schedule, net.config, x, t);
  const Var raw = mlp_forward(vars, net.config, in);
  return diff::mul_col(raw, inverse_sigma_column(tape, net.schedule, t));
}

Dual score_net_forward_dual(std::span<const Var> vars, const ScoreNet& net, const Points& x,
                            const Eigen::VectorXd& t) {
  Tape& tape = vars.front().tape();
  const Dual in = network_input(tape, net.schedule, net.config, x, t);
  const Dual raw = mlp_forward(vars, net.config, in);
  const Var inv = inverse_sigma_column(tape, net.schedule, t);
  return {diff::mul_col(raw.value, inv), {diff::mul_col(raw.tangent[0], inv), diff::mul_col(raw.tangent[1], inv)}};
}

Points score_net_eval(const ScoreNet& net, const Points& x, const Eigen::VectorXd& t) {
  Tape tape;
  const auto vars = diff::bind(tape, net.params, false);
  return score_net_forward(vars, net, x, t).value();
}

Points score_net_eval(const ScoreNet& net, const Points& x, double t) {
  return score_net_eval(net, x, broadcast_time(t, x.rows()));
}

Point score_net_eval(const ScoreNet& net, const Point& x, double t) {
  Points p(1, 2);
  p.row(0) = x.transpose();
  return score_net_eval(net, p, t).row(0).transpose();
}

Eigen::Matrix2d score_net_jacobian(const ScoreNet& net, const Point& x, double t) {
  Tape tape;
  const auto vars = diff::bind(tape, net.params, false);
  Points p(1, 2);
  p.row(0) = x.transpose();
  const Dual out = score_net_forward_dual(vars, net, p, broadcast_time(t, 1));
  Eigen::Matrix2d jac;
  jac.col(0) = out.tangent[0].value().row(0).transpose();
  jac.col(1) = out.tangent[1].value().row(0).transpose();
  return jac;
}

}  // namespace selfcal
