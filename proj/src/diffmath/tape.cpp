#include "selfcal/diffmath/tape.hpp"

#include "selfcal/error.hpp"

#include <cmath>
#include <string>

namespace selfcal::diff {

namespace {

double softplus_scalar(double a) { return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a))); }

double sigmoid_scalar(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

Matrix softmax_of(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    const double m = a.row(i).maxCoeff();
    out.row(i) = (a.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::InvalidArgument,
                std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()));
  }
}

}  // namespace

const char* Tape::op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::AddBias: return "add_bias";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::MulCol: return "mul_col";
    case Op::AddCol: return "add_col";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Softplus: return "softplus";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::TanhPrime: return "tanh_prime";
    case Op::Square: return "square";
    case Op::LogSumExpRows: return "logsumexp_rows";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::SumRows: return "sum_rows";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Pick: return "pick";
    case Op::GatherRows: return "gather_rows";
    case Op::ConcatCols: return "concat_cols";
    case Op::SliceCols: return "slice_cols";
  }
  return "?";
}

Var Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  return push(std::move(node));
}

Var Tape::variable(Matrix value) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = true;
  return push(std::move(node));
}

Var Tape::scalar_constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Matrix Tape::grad(Var v) const {
  const Node& node = nodes_[v.id_];
  if (node.grad.size() == 0) return Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

Var Tape::push(Node node) {
  const int id = static_cast<int>(nodes_.size());
  if (node.op != Op::Leaf) {
    node.value = compute(node);
    node.needs_grad = (node.a >= 0 && nodes_[node.a].needs_grad) ||
                      (node.b >= 0 && nodes_[node.b].needs_grad);
  }
  if (!node.value.allFinite()) {
    throw Error(ErrorCode::NumericalOverflow,
                "non-finite value at node " + std::to_string(id) + " (" + op_name(node.op) + ")");
  }
  nodes_.push_back(std::move(node));
  return Var(this, id);
}

Var Tape::unary(Op op, Var a, double scalar) {
  Node node;
  node.op = op;
  node.a = a.id_;
  node.scalar = scalar;
  return push(std::move(node));
}

Var Tape::binary(Op op, Var a, Var b) {
  Node node;
  node.op = op;
  node.a = a.id_;
  node.b = b.id_;
  return push(std::move(node));
}

Var Tape::pick(Var a, std::vector<int> index) {
  if (static_cast<Index>(index.size()) != a.rows()) {
    throw Error(ErrorCode::InvalidArgument, "pick: index length must equal row count");
  }
  for (int k : index) {
    if (k < 0 || k >= a.cols()) throw Error(ErrorCode::InvalidArgument, "pick: column out of range");
  }
  Node node;
  node.op = Op::Pick;
  node.a = a.id_;
  node.index = std::move(index);
  return push(std::move(node));
}

Var Tape::gather_rows(Var table, std::vector<int> index) {
  for (int k : index) {
    if (k < 0 || k >= table.rows()) {
      throw Error(ErrorCode::InvalidArgument, "gather_rows: row out of range");
    }
  }
  Node node;
  node.op = Op::GatherRows;
  node.a = table.id_;
  node.index = std::move(index);
  return push(std::move(node));
}

Var Tape::slice_cols(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw Error(ErrorCode::InvalidArgument, "slice_cols: range out of bounds");
  }
  Node node;
  node.op = Op::SliceCols;
  node.a = a.id_;
  node.start = start;
  node.count = count;
  return push(std::move(node));
}

Matrix Tape::compute(const Node& n) const {
  const Matrix& a = nodes_[n.a].value;
  switch (n.op) {
    case Op::Leaf:
      return n.value;
    case Op::MatMul: {
      const Matrix& b = nodes_[n.b].value;
      if (a.cols() != b.rows()) throw Error(ErrorCode::InvalidArgument, "matmul: inner dimension mismatch");
      return a * b;
    }
    case Op::AddBias: {
      const Matrix& b = nodes_[n.b].value;
      if (b.rows() != 1 || b.cols() != a.cols()) throw Error(ErrorCode::InvalidArgument, "add_bias: bias must be 1 x cols");
      return a.rowwise() + b.row(0);
    }
    case Op::Add:
      check_same_shape(a, nodes_[n.b].value, "add");
      return a + nodes_[n.b].value;
    case Op::Sub:
      check_same_shape(a, nodes_[n.b].value, "sub");
      return a - nodes_[n.b].value;
    case Op::Mul:
      check_same_shape(a, nodes_[n.b].value, "mul");
      return a.cwiseProduct(nodes_[n.b].value);
    case Op::MulCol: {
      const Matrix& c = nodes_[n.b].value;
      if (c.cols() != 1 || c.rows() != a.rows()) throw Error(ErrorCode::InvalidArgument, "mul_col: column shape mismatch");
      return a.array().colwise() * c.col(0).array();
    }
    case Op::AddCol: {
      const Matrix& c = nodes_[n.b].value;
      if (c.cols() != 1 || c.rows() != a.rows()) throw Error(ErrorCode::InvalidArgument, "add_col: column shape mismatch");
      return a.colwise() + c.col(0);
    }
    case Op::Scale:
      return n.scalar * a;
    case Op::AddScalar:
      return (a.array() + n.scalar).matrix();
    case Op::Softplus:
      return a.unaryExpr([](double v) { return softplus_scalar(v); });
    case Op::Sigmoid:
      return a.unaryExpr([](double v) { return sigmoid_scalar(v); });
    case Op::Tanh:
      return a.array().tanh().matrix();
    case Op::TanhPrime:
      return (1.0 - a.array().tanh().square()).matrix();
    case Op::Square:
      return a.array().square().matrix();
    case Op::LogSumExpRows: {
      Matrix out(a.rows(), 1);
      for (Index i = 0; i < a.rows(); ++i) {
        const double m = a.row(i).maxCoeff();
        out(i, 0) = m + std::log((a.row(i).array() - m).exp().sum());
      }
      return out;
    }
    case Op::SoftmaxRows:
      return softmax_of(a);
    case Op::SumRows:
      return a.rowwise().sum();
    case Op::Sum:
      return Matrix::Constant(1, 1, a.sum());
    case Op::Mean:
      if (a.size() == 0) throw Error(ErrorCode::EmptyBatch, "mean of an empty matrix");
      return Matrix::Constant(1, 1, a.mean());
    case Op::Pick: {
      Matrix out(a.rows(), 1);
      for (Index i = 0; i < a.rows(); ++i) out(i, 0) = a(i, n.index[static_cast<std::size_t>(i)]);
      return out;
    }
    case Op::GatherRows: {
      Matrix out(static_cast<Index>(n.index.size()), a.cols());
      for (Index i = 0; i < out.rows(); ++i) out.row(i) = a.row(n.index[static_cast<std::size_t>(i)]);
      return out;
    }
    case Op::ConcatCols: {
      const Matrix& b = nodes_[n.b].value;
      if (a.rows() != b.rows()) throw Error(ErrorCode::InvalidArgument, "concat_cols: row mismatch");
      Matrix out(a.rows(), a.cols() + b.cols());
      out << a, b;
      return out;
    }
    case Op::SliceCols:
      return a.middleCols(n.start, n.count);
  }
  return {};
}

bool Tape::replay_matches() const {
  for (const Node& node : nodes_) {
    if (node.op == Op::Leaf) continue;
    const Matrix again = compute(node);
    if (again.rows() != node.value.rows() || again.cols() != node.value.cols()) return false;
    if (again != node.value) return false;
  }
  return true;
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& node = nodes_[id];
  if (!node.needs_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

void Tape::backward(Var output) {
  if (output.tape_ != this) throw Error(ErrorCode::InvalidArgument, "backward: variable from another tape");
  if (output.rows() != 1 || output.cols() != 1) {
    throw Error(ErrorCode::InvalidArgument, "backward: output must be a 1x1 scalar");
  }
  for (Node& node : nodes_) node.grad.resize(0, 0);
  trace_.clear();
  if (!nodes_[output.id_].needs_grad) return;
  nodes_[output.id_].grad = Matrix::Ones(1, 1);
  for (int id = output.id_; id >= 0; --id) {
    const Node& node = nodes_[id];
    if (node.grad.size() == 0 || node.op == Op::Leaf) continue;
    trace_.push_back(id);
    propagate(node);
  }
}

void Tape::propagate(const Node& n) {
  const Matrix& g = n.grad;
  const Matrix& a = nodes_[n.a].value;
  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::MatMul: {
      const Matrix& b = nodes_[n.b].value;
      if (nodes_[n.a].needs_grad) accumulate(n.a, g * b.transpose());
      if (nodes_[n.b].needs_grad) accumulate(n.b, a.transpose() * g);
      break;
    }
    case Op::AddBias:
      accumulate(n.a, g);
      if (nodes_[n.b].needs_grad) accumulate(n.b, g.colwise().sum());
      break;
    case Op::Add:
      accumulate(n.a, g);
      accumulate(n.b, g);
      break;
    case Op::Sub:
      accumulate(n.a, g);
      if (nodes_[n.b].needs_grad) accumulate(n.b, -g);
      break;
    case Op::Mul: {
      const Matrix& b = nodes_[n.b].value;
      if (nodes_[n.a].needs_grad) accumulate(n.a, g.cwiseProduct(b));
      if (nodes_[n.b].needs_grad) accumulate(n.b, g.cwiseProduct(a));
      break;
    }
    case Op::MulCol: {
      const Matrix& c = nodes_[n.b].value;
      if (nodes_[n.a].needs_grad) accumulate(n.a, g.array().colwise() * c.col(0).array());
      if (nodes_[n.b].needs_grad) accumulate(n.b, g.cwiseProduct(a).rowwise().sum());
      break;
    }
    case Op::AddCol:
      accumulate(n.a, g);
      if (nodes_[n.b].needs_grad) accumulate(n.b, g.rowwise().sum());
      break;
    case Op::Scale:
      accumulate(n.a, n.scalar * g);
      break;
    case Op::AddScalar:
      accumulate(n.a, g);
      break;
    case Op::Softplus:
      accumulate(n.a, g.cwiseProduct(a.unaryExpr([](double v) { return sigmoid_scalar(v); })));
      break;
    case Op::Sigmoid: {
      const Matrix& s = n.value;
      accumulate(n.a, (g.array() * s.array() * (1.0 - s.array())).matrix());
      break;
    }
    case Op::Tanh:
      accumulate(n.a, (g.array() * (1.0 - n.value.array().square())).matrix());
      break;
    case Op::TanhPrime: {
      const Eigen::ArrayXXd th = a.array().tanh();
      accumulate(n.a, (g.array() * (-2.0 * th * n.value.array())).matrix());
      break;
    }
    case Op::Square:
      accumulate(n.a, (2.0 * g.array() * a.array()).matrix());
      break;
    case Op::LogSumExpRows: {
      const Matrix p = softmax_of(a);
      accumulate(n.a, p.array().colwise() * g.col(0).array());
      break;
    }
    case Op::SoftmaxRows: {
      const Matrix& y = n.value;
      const Eigen::VectorXd inner = g.cwiseProduct(y).rowwise().sum();
      accumulate(n.a, (y.array() * (g.colwise() - inner).array()).matrix());
      break;
    }
    case Op::SumRows:
      accumulate(n.a, g.col(0).replicate(1, a.cols()));
      break;
    case Op::Sum:
      accumulate(n.a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
      break;
    case Op::Mean:
      accumulate(n.a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / static_cast<double>(a.size())));
      break;
    case Op::Pick: {
      Matrix ga = Matrix::Zero(a.rows(), a.cols());
      for (Index i = 0; i < a.rows(); ++i) ga(i, n.index[static_cast<std::size_t>(i)]) = g(i, 0);
      accumulate(n.a, ga);
      break;
    }
    case Op::GatherRows: {
      Matrix ga = Matrix::Zero(a.rows(), a.cols());
      for (Index i = 0; i < g.rows(); ++i) ga.row(n.index[static_cast<std::size_t>(i)]) += g.row(i);
      accumulate(n.a, ga);
      break;
    }
    case Op::ConcatCols: {
      if (nodes_[n.a].needs_grad) accumulate(n.a, g.leftCols(a.cols()));
      const Index bc = nodes_[n.b].value.cols();
      if (nodes_[n.b].needs_grad) accumulate(n.b, g.rightCols(bc));
      break;
    }
    case Op::SliceCols: {
      Matrix ga = Matrix::Zero(a.rows(), a.cols());
      ga.middleCols(n.start, n.count) = g;
      accumulate(n.a, ga);
      break;
    }
  }
}

// --- free functions ----------------------------------------------------------

namespace {
void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw Error(ErrorCode::InvalidArgument, "operands live on different tapes");
}
}  // namespace

Var matmul(Var a, Var b) { require_same_tape(a, b); return a.tape().binary(Tape::Op::MatMul, a, b); }
Var add_bias(Var a, Var bias) { require_same_tape(a, bias); return a.tape().binary(Tape::Op::AddBias, a, bias); }
Var operator+(Var a, Var b) { require_same_tape(a, b); return a.tape().binary(Tape::Op::Add, a, b); }
Var operator-(Var a, Var b) { require_same_tape(a, b); return a.tape().binary(Tape::Op::Sub, a, b); }
Var operator-(Var a) { return a.tape().unary(Tape::Op::Scale, a, -1.0); }
Var operator*(double s, Var a) { return a.tape().unary(Tape::Op::Scale, a, s); }
Var operator*(Var a, double s) { return a.tape().unary(Tape::Op::Scale, a, s); }
Var operator+(Var a, double c) { return a.tape().unary(Tape::Op::AddScalar, a, c); }
Var cwise_product(Var a, Var b) { require_same_tape(a, b); return a.tape().binary(Tape::Op::Mul, a, b); }
Var mul_col(Var a, Var c) { require_same_tape(a, c); return a.tape().binary(Tape::Op::MulCol, a, c); }
Var add_col(Var a, Var c) { require_same_tape(a, c); return a.tape().binary(Tape::Op::AddCol, a, c); }
Var softplus(Var a) { return a.tape().unary(Tape::Op::Softplus, a); }
Var sigmoid(Var a) { return a.tape().unary(Tape::Op::Sigmoid, a); }
Var tanh(Var a) { return a.tape().unary(Tape::Op::Tanh, a); }
Var tanh_prime(Var a) { return a.tape().unary(Tape::Op::TanhPrime, a); }
Var square(Var a) { return a.tape().unary(Tape::Op::Square, a); }
Var logsumexp_rows(Var a) { return a.tape().unary(Tape::Op::LogSumExpRows, a); }
Var softmax_rows(Var a) { return a.tape().unary(Tape::Op::SoftmaxRows, a); }
Var sum_rows(Var a) { return a.tape().unary(Tape::Op::SumRows, a); }
Var sum(Var a) { return a.tape().unary(Tape::Op::Sum, a); }
Var mean(Var a) { return a.tape().unary(Tape::Op::Mean, a); }
Var pick(Var a, std::vector<int> index) { return a.tape().pick(a, std::move(index)); }
Var gather_rows(Var table, std::vector<int> index) { return table.tape().gather_rows(table, std::move(index)); }
Var concat_cols(Var a, Var b) { require_same_tape(a, b); return a.tape().binary(Tape::Op::ConcatCols, a, b); }
Var slice_cols(Var a, Index start, Index count) { return a.tape().slice_cols(a, start, count); }
Var squared_norm_rows(Var a) { return sum_rows(square(a)); }

}  // namespace selfcal::diff
