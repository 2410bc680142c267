#pragma once

#include "selfcal/diffmath/params.hpp"
#include "selfcal/error.hpp"
#include "selfcal/types.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace selfcal::testing {

inline constexpr double kFdStep = 1e-5;

// Central differences of a scalar function of a matrix.
template <typename F>
Eigen::MatrixXd fd_gradient(F&& f, Eigen::MatrixXd x, double h = kFdStep) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x(i);
    x(i) = keep + h;
    const double up = f(x);
    x(i) = keep - h;
    const double down = f(x);
    x(i) = keep;
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

// Central differences over every scalar of a parameter set.
template <typename F>
diff::ParamSet fd_param_gradient(F&& f, const diff::ParamSet& params, double h = kFdStep) {
  Eigen::VectorXd flat = params.flatten();
  Eigen::VectorXd g(flat.size());
  diff::ParamSet probe = params;
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    const double keep = flat(i);
    flat(i) = keep + h;
    probe.assign_flat(flat);
    const double up = f(probe);
    flat(i) = keep - h;
    probe.assign_flat(flat);
    const double down = f(probe);
    flat(i) = keep;
    g(i) = (up - down) / (2.0 * h);
  }
  diff::ParamSet out = params.zeros_like();
  out.assign_flat(g);
  return out;
}

// Norm-wise relative error of `a` against the reference `b`.
template <typename A, typename B>
double rel_err(const A& a, const B& b) {
  const double denom = std::max(b.norm(), 1e-12);
  return (a - b).norm() / denom;
}

inline double rel_err(const diff::ParamSet& a, const diff::ParamSet& b) { return rel_err(a.flatten(), b.flatten()); }

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

// Randomizes every parameter, including zero-initialized output layers.
inline void randomize(diff::ParamSet& params, Rng& rng, double scale = 0.5) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] = random_matrix(params[i].rows(), params[i].cols(), rng, scale);
  }
}

}  // namespace selfcal::testing
