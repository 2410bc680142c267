#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace selfcal::diff {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class Tape;

// Handle to one matrix-valued node of a Tape. Rows are batch elements by
// convention; scalars are 1x1.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix& value() const;
  double scalar() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Single-use record of elementary matrix operations with a reverse sweep.
// Nodes are appended in evaluation order, so descending id is a reverse
// topological order. Not thread-safe; confine one tape to one thread.
class Tape {
 public:
  enum class Op : std::uint8_t {
    Leaf,
    MatMul,
    AddBias,
    Add,
    Sub,
    Mul,
    MulCol,
    AddCol,
    Scale,
    AddScalar,
    Softplus,
    Sigmoid,
    Tanh,
    TanhPrime,
    Square,
    LogSumExpRows,
    SoftmaxRows,
    SumRows,
    Sum,
    Mean,
    Pick,
    GatherRows,
    ConcatCols,
    SliceCols,
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  Var scalar_constant(double value);

  const Matrix& value(Var v) const { return nodes_[v.id_].value; }
  // Adjoint of v after backward(); zeros if v received no gradient.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id_].needs_grad; }

  // Reverse sweep from a 1x1 output.
  void backward(Var output);

  // Recomputes every non-leaf node from its parents and reports whether all
  // values match the recorded ones bit-for-bit.
  bool replay_matches() const;

  // Node ids in the order the last backward() visited them.
  const std::vector<int>& backward_trace() const { return trace_; }

  std::size_t size() const { return nodes_.size(); }
  Op op(int id) const { return nodes_[id].op; }
  static const char* op_name(Op op);

  // Primitive constructors; prefer the free functions below.
  Var unary(Op op, Var a, double scalar = 0.0);
  Var binary(Op op, Var a, Var b);
  Var pick(Var a, std::vector<int> index);
  Var gather_rows(Var table, std::vector<int> index);
  Var slice_cols(Var a, Index start, Index count);

 private:
  struct Node {
    Op op = Op::Leaf;
    int a = -1;
    int b = -1;
    double scalar = 0.0;
    Index start = 0;
    Index count = 0;
    std::vector<int> index;
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
  };

  Var push(Node node);
  Matrix compute(const Node& node) const;
  void accumulate(int id, const Matrix& g);
  void propagate(const Node& node);

  std::vector<Node> nodes_;
  std::vector<int> trace_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }
inline double Var::scalar() const { return value()(0, 0); }

// --- elementary operations -------------------------------------------------

Var matmul(Var a, Var b);
// a + b where b is a 1 x cols row broadcast over the rows of a.
Var add_bias(Var a, Var bias);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator-(Var a);
Var operator*(double s, Var a);
Var operator*(Var a, double s);
Var operator+(Var a, double c);
// Elementwise product of equally shaped matrices.
Var cwise_product(Var a, Var b);
// Scales each row of a by the matching entry of the column c.
Var mul_col(Var a, Var c);
// Adds the column c to every column of a.
Var add_col(Var a, Var c);
Var softplus(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
// 1 - tanh(a)^2, with its own derivative so tangents of tanh layers can be
// reverse-differentiated.
Var tanh_prime(Var a);
Var square(Var a);
// Row-wise log-sum-exp, shifted by the row max. Returns rows x 1.
Var logsumexp_rows(Var a);
Var softmax_rows(Var a);
// Sum across columns. Returns rows x 1.
Var sum_rows(Var a);
Var sum(Var a);
Var mean(Var a);
// out(i) = a(i, index[i]). Returns rows x 1.
Var pick(Var a, std::vector<int> index);
// out.row(i) = table.row(index[i]).
Var gather_rows(Var table, std::vector<int> index);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, Index start, Index count);
// Row-wise squared Euclidean norm. Returns rows x 1.
Var squared_norm_rows(Var a);

}  // namespace selfcal::diff
