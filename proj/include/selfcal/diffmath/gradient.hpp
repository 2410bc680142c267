#pragma once

#include "selfcal/diffmath/dual.hpp"
#include "selfcal/diffmath/params.hpp"
#include "selfcal/diffmath/tape.hpp"
#include "selfcal/error.hpp"

#include <Eigen/Dense>

#include <span>

namespace selfcal::diff {

struct GradResult {
  double value = 0.0;
  ParamSet gradient;
};

// Value and parameter gradient of a scalar loss. `loss` receives the tape and
// the bound parameter leaves (in ParamSet order) and returns a 1x1 node.
template <typename LossFn>
GradResult param_gradient(LossFn&& loss, const ParamSet& params) {
  Tape tape;
  const std::vector<Var> vars = bind(tape, params, true);
  const Var out = loss(tape, std::span<const Var>(vars));
  if (out.rows() != 1 || out.cols() != 1) throw Error(ErrorCode::InvalidArgument, "loss must be scalar");
  tape.backward(out);
  GradResult result;
  result.value = out.scalar();
  for (std::size_t i = 0; i < params.size(); ++i) result.gradient.add(params.name(i), tape.grad(vars[i]));
  return result;
}

// Value of the same kind of loss with parameters held constant.
template <typename LossFn>
double evaluate(LossFn&& loss, const ParamSet& params) {
  Tape tape;
  const std::vector<Var> vars = bind(tape, params, false);
  return loss(tape, std::span<const Var>(vars)).scalar();
}

// Gradient of a scalar-valued function of a 2D point. `net` maps a 1-row dual
// input (the point, with unit tangents) to a 1x1 dual.
template <typename NetFn>
Eigen::Vector2d input_gradient(NetFn&& net, const Eigen::Vector2d& x) {
  Tape tape;
  Dual in;
  in.value = tape.constant(x.transpose());
  in.tangent[0] = tape.constant(Eigen::RowVector2d(1.0, 0.0));
  in.tangent[1] = tape.constant(Eigen::RowVector2d(0.0, 1.0));
  const Dual out = net(tape, in);
  if (out.value.rows() != 1 || out.value.cols() != 1) {
    throw Error(ErrorCode::InvalidArgument, "input_gradient: net must return a scalar");
  }
  return {out.tangent[0].scalar(), out.tangent[1].scalar()};
}

}  // namespace selfcal::diff
