#pragma once

#include "selfcal/diffmath/tape.hpp"

#include <array>

namespace selfcal::diff {

// A batch of values together with their directional derivatives along the
// two input axes. Every component is a tape node, so anything computed from
// the tangents can itself be reverse-differentiated for parameters.
struct Dual {
  Var value;
  std::array<Var, 2> tangent;
};

// Seeds a dual input [x | extra] whose tangent k is the unit vector along
// column k of x; the `extra` columns (time features) carry zero tangent.
inline Dual seed_input(Tape& tape, const Matrix& x, const Matrix& extra) {
  const Index rows = x.rows();
  Matrix value(rows, x.cols() + extra.cols());
  value << x, extra;
  Dual d;
  d.value = tape.constant(std::move(value));
  for (int k = 0; k < 2; ++k) {
    Matrix t = Matrix::Zero(rows, x.cols() + extra.cols());
    t.col(k).setOnes();
    d.tangent[static_cast<std::size_t>(k)] = tape.constant(std::move(t));
  }
  return d;
}

inline Dual constant_dual(Tape& tape, const Matrix& value) {
  Dual d;
  d.value = tape.constant(value);
  for (auto& t : d.tangent) t = tape.constant(Matrix::Zero(value.rows(), value.cols()));
  return d;
}

inline Dual affine(const Dual& in, Var weight, Var bias) {
  Dual out;
  out.value = add_bias(matmul(in.value, weight), bias);
  for (std::size_t k = 0; k < 2; ++k) out.tangent[k] = matmul(in.tangent[k], weight);
  return out;
}

// Adds an x-independent term (e.g. a label embedding) to the value only.
inline Dual add_constant_in_x(const Dual& in, Var term) {
  Dual out = in;
  out.value = in.value + term;
  return out;
}

inline Dual operator+(const Dual& a, const Dual& b) {
  return {a.value + b.value, {a.tangent[0] + b.tangent[0], a.tangent[1] + b.tangent[1]}};
}

inline Dual operator-(const Dual& a, const Dual& b) {
  return {a.value - b.value, {a.tangent[0] - b.tangent[0], a.tangent[1] - b.tangent[1]}};
}

inline Dual operator*(double s, const Dual& a) {
  return {s * a.value, {s * a.tangent[0], s * a.tangent[1]}};
}

inline Dual softplus(const Dual& a) {
  const Var slope = sigmoid(a.value);
  return {softplus(a.value), {cwise_product(slope, a.tangent[0]), cwise_product(slope, a.tangent[1])}};
}

inline Dual tanh(const Dual& a) {
  const Var slope = tanh_prime(a.value);
  return {tanh(a.value), {cwise_product(slope, a.tangent[0]), cwise_product(slope, a.tangent[1])}};
}

// Row-wise log-sum-exp; tangent k is sum_j softmax_j * d(a_j)/dx_k.
inline Dual logsumexp_rows(const Dual& a) {
  const Var weights = softmax_rows(a.value);
  return {logsumexp_rows(a.value),
          {sum_rows(cwise_product(weights, a.tangent[0])), sum_rows(cwise_product(weights, a.tangent[1]))}};
}

// Per-row input gradient of a rows x 1 dual, as a rows x 2 node.
inline Var gradient_rows(const Dual& scalar_rows) {
  return concat_cols(scalar_rows.tangent[0], scalar_rows.tangent[1]);
}

}  // namespace selfcal::diff
