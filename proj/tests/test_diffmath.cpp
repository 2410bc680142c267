#include "support.hpp"

#include "selfcal/diffmath/gradient.hpp"

#include <doctest.h>

#include <functional>

using namespace selfcal;
using namespace selfcal::diff;
using selfcal::testing::fd_gradient;
using selfcal::testing::fd_param_gradient;
using selfcal::testing::random_matrix;
using selfcal::testing::rel_err;

namespace {

using UnaryOp = std::function<Var(Var)>;

// Reverse-mode gradient of sum(op(a) .* r) against central differences.
double op_grad_error(const UnaryOp& op, const Matrix& a, Rng& rng) {
  Tape probe;
  const Matrix r = random_matrix(op(probe.constant(a)).rows(), op(probe.constant(a)).cols(), rng);
  const auto value = [&](const Matrix& m) {
    Tape t;
    return (op(t.constant(m)).value().array() * r.array()).sum();
  };
  Tape tape;
  const Var x = tape.variable(a);
  const Var out = sum(cwise_product(op(x), tape.constant(r)));
  tape.backward(out);
  return rel_err(tape.grad(x), fd_gradient(value, a));
}

// Two-layer tanh MLP summed over a batch.
Var tanh_mlp(Tape& tape, std::span<const Var> p, const Matrix& x) {
  const Var h = tanh(add_bias(matmul(tape.constant(x), p[0]), p[1]));
  return sum(add_bias(matmul(h, p[2]), p[3]));
}

ParamSet tanh_mlp_params(Rng& rng) {
  ParamSet p;
  p.add("w1", random_matrix(2, 8, rng));
  p.add("b1", random_matrix(1, 8, rng));
  p.add("w2", random_matrix(8, 1, rng));
  p.add("b2", random_matrix(1, 1, rng));
  return p;
}

// Scalar network of one point in dual form: softplus MLP with a
// logsumexp head, so every dual op is on the path.
Dual dual_net(std::span<const Var> p, const Dual& in) {
  const Dual h = tanh(affine(in, p[0], p[1]));
  const Dual g = softplus(affine(h, p[2], p[3]));
  return logsumexp_rows(g);
}

ParamSet dual_net_params(Rng& rng) {
  ParamSet p;
  p.add("w1", random_matrix(2, 6, rng));
  p.add("b1", random_matrix(1, 6, rng));
  p.add("w2", random_matrix(6, 3, rng));
  p.add("b2", random_matrix(1, 3, rng));
  return p;
}

}  // namespace

TEST_CASE("param gradient of w*w at 3") {
  ParamSet p;
  p.add("w", Matrix::Constant(1, 1, 3.0));
  const GradResult r = param_gradient([](Tape&, std::span<const Var> v) { return cwise_product(v[0], v[0]); }, p);
  CHECK(r.value == 9.0);
  CHECK(r.gradient[0](0, 0) == 6.0);
}

TEST_CASE("constant loss has zero gradient") {
  ParamSet p;
  p.add("w", Matrix::Constant(2, 3, 1.5));
  const GradResult r = param_gradient([](Tape& t, std::span<const Var>) { return t.scalar_constant(4.0); }, p);
  CHECK(r.value == 4.0);
  CHECK(r.gradient[0].isZero(0.0));
}

TEST_CASE("elementary ops match finite differences") {
  Rng rng = make_rng(11, Stream::Init);
  const Matrix a = random_matrix(4, 3, rng);
  const Matrix b = random_matrix(3, 5, rng);
  const Matrix same = random_matrix(4, 3, rng);
  const Matrix row = random_matrix(1, 3, rng);
  const Matrix col = random_matrix(4, 1, rng);
  const Matrix lhs = random_matrix(5, 4, rng);
  const std::vector<std::pair<const char*, UnaryOp>> ops = {
      {"matmul", [&](Var x) { return matmul(x, x.tape().constant(b)); }},
      {"matmul rhs", [&](Var x) { return matmul(x.tape().constant(lhs), x); }},
      {"add_bias", [&](Var x) { return add_bias(x, x.tape().constant(row)); }},
      {"bias operand", [&](Var x) { return add_bias(x.tape().constant(same), gather_rows(x, {1})); }},
      {"add", [&](Var x) { return x + x.tape().constant(same); }},
      {"sub", [&](Var x) { return x.tape().constant(same) - x; }},
      {"neg", [](Var x) { return -x; }},
      {"scale", [](Var x) { return 2.5 * x; }},
      {"add scalar", [](Var x) { return x + 1.25; }},
      {"cwise", [&](Var x) { return cwise_product(x, x.tape().constant(same)); }},
      {"cwise self", [](Var x) { return cwise_product(x, x); }},
      {"mul_col", [&](Var x) { return mul_col(x, x.tape().constant(col)); }},
      {"mul_col column", [&](Var x) { return mul_col(x.tape().constant(same), slice_cols(x, 1, 1)); }},
      {"add_col", [&](Var x) { return add_col(x, slice_cols(x, 2, 1)); }},
      {"softplus", [](Var x) { return softplus(x); }},
      {"sigmoid", [](Var x) { return sigmoid(x); }},
      {"tanh", [](Var x) { return tanh(x); }},
      {"tanh_prime", [](Var x) { return tanh_prime(x); }},
      {"square", [](Var x) { return square(x); }},
      {"logsumexp", [](Var x) { return logsumexp_rows(x); }},
      {"softmax", [](Var x) { return softmax_rows(x); }},
      {"sum_rows", [](Var x) { return sum_rows(x); }},
      {"sum", [](Var x) { return sum(x); }},
      {"mean", [](Var x) { return mean(x); }},
      {"pick", [](Var x) { return pick(x, {0, 2, 1, 2}); }},
      {"gather", [](Var x) { return gather_rows(x, {3, 0, 0, 1, 2}); }},
      {"concat", [&](Var x) { return concat_cols(x, x.tape().constant(same)); }},
      {"concat rhs", [&](Var x) { return concat_cols(x.tape().constant(col), x); }},
      {"slice", [](Var x) { return slice_cols(x, 1, 2); }},
      {"squared norm", [](Var x) { return squared_norm_rows(x); }},
  };
  for (const auto& [name, op] : ops) {
    CAPTURE(name);
    CHECK(op_grad_error(op, a, rng) < 1e-7);
  }
}

TEST_CASE("parameter gradient of a tanh MLP matches finite differences") {
  Rng rng = make_rng(3, Stream::Init);
  for (int trial = 0; trial < 5; ++trial) {
    const ParamSet p = tanh_mlp_params(rng);
    const Matrix x = random_matrix(5, 2, rng);
    const auto loss = [&](Tape& t, std::span<const Var> v) { return tanh_mlp(t, v, x); };
    const GradResult r = param_gradient(loss, p);
    const ParamSet fd = fd_param_gradient([&](const ParamSet& q) { return evaluate(loss, q); }, p);
    CHECK(rel_err(r.gradient, fd) < 1e-4);
  }
}

TEST_CASE("input gradient of simple functions") {
  const Eigen::Vector2d x(1.0, 2.0);
  SUBCASE("linear w.x + b gives w") {
    const auto net = [](Tape& t, const Dual& in) {
      return affine(in, t.constant(Eigen::Vector2d(0.3, -1.7)), t.constant(Matrix::Constant(1, 1, 0.4)));
    };
    const Eigen::Vector2d g = input_gradient(net, x);
    CHECK(g(0) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(g(1) == doctest::Approx(-1.7).epsilon(1e-15));
  }
  SUBCASE("constant gives zero") {
    const auto net = [](Tape& t, const Dual&) { return constant_dual(t, Matrix::Constant(1, 1, 5.0)); };
    CHECK(input_gradient(net, x).isZero(0.0));
  }
  SUBCASE("half squared norm gives x") {
    const auto net = [](Tape&, const Dual& in) {
      Dual out;
      out.value = 0.5 * squared_norm_rows(in.value);
      for (std::size_t k = 0; k < 2; ++k) out.tangent[k] = sum_rows(cwise_product(in.value, in.tangent[k]));
      return out;
    };
    CHECK(input_gradient(net, x).isApprox(x, 1e-15));
  }
}

TEST_CASE("dual tangents match finite differences in x") {
  Rng rng = make_rng(5, Stream::Init);
  for (int trial = 0; trial < 10; ++trial) {
    const ParamSet p = dual_net_params(rng);
    const Eigen::Vector2d x = random_matrix(2, 1, rng);
    const auto net = [&](Tape& t, const Dual& in) { return dual_net(bind(t, p, false), in); };
    const Eigen::Vector2d g = input_gradient(net, x);
    const auto f = [&](const Matrix& m) {
      Tape t;
      const std::vector<Var> v = bind(t, p, false);
      return dual_net(v, constant_dual(t, m.transpose())).value.scalar();
    };
    CHECK(rel_err(g, fd_gradient(f, Matrix(x))) < 1e-4);
  }
}

TEST_CASE("dual tangents are linear") {
  Tape tape;
  const Dual u = seed_input(tape, Matrix::Constant(1, 2, 0.5), Matrix(1, 0));
  const Dual v = seed_input(tape, Matrix::Constant(1, 2, -1.0), Matrix(1, 0));
  const Dual w = 2.0 * u - 3.0 * v;
  CHECK(w.tangent[0].value().isApprox(Matrix(Eigen::RowVector2d(-1.0, 0.0))));
  CHECK(w.tangent[1].value().isApprox(Matrix(Eigen::RowVector2d(0.0, -1.0))));
  const Dual c = constant_dual(tape, Matrix::Ones(3, 2));
  CHECK(c.tangent[0].value().isZero(0.0));
}

TEST_CASE("second-order gradient through input tangents matches finite differences") {
  // Loss over parameters of sum_i |grad_x net(x_i) - target_i|^2.
  Rng rng = make_rng(9, Stream::Init);
  for (int trial = 0; trial < 5; ++trial) {
    const ParamSet p = dual_net_params(rng);
    const Matrix x = random_matrix(4, 2, rng);
    const Matrix target = random_matrix(4, 2, rng);
    const auto loss = [&](Tape& t, std::span<const Var> v) {
      const Dual out = dual_net(v, seed_input(t, x, Matrix(4, 0)));
      return sum(square(gradient_rows(out) - t.constant(target)));
    };
    const GradResult r = param_gradient(loss, p);
    const ParamSet fd = fd_param_gradient([&](const ParamSet& q) { return evaluate(loss, q); }, p);
    CHECK(rel_err(r.gradient, fd) < 1e-3);
  }
}

TEST_CASE("logsumexp is shift invariant and overflow safe") {
  const Matrix a = (Matrix(2, 3) << 0.5, -1.25, 2.0, 800.0, 799.0, 790.0).finished();
  const double c = 1024.0;
  Tape tape;
  const Var base = logsumexp_rows(tape.constant(a));
  const Var shifted = logsumexp_rows(tape.constant(a.array() + c));
  CHECK(base.value().allFinite());
  for (Index i = 0; i < 2; ++i) CHECK(shifted.value()(i, 0) - base.value()(i, 0) == doctest::Approx(c).epsilon(1e-15));
  const Var s0 = softmax_rows(tape.constant(a));
  const Var s1 = softmax_rows(tape.constant(a.array() + c));
  CHECK((s0.value() - s1.value()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("overflow raises numerical-overflow with the node") {
  Tape tape;
  const Var x = tape.variable(Matrix::Constant(1, 1, 1e200));
  try {
    (void)square(x);
    FAIL("expected overflow");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NumericalOverflow);
    CHECK(std::string(e.what()).find("square") != std::string::npos);
  }
}

TEST_CASE("replay and backward order") {
  Rng rng = make_rng(1, Stream::Init);
  const ParamSet p = tanh_mlp_params(rng);
  Tape tape;
  const std::vector<Var> vars = bind(tape, p, true);
  const Var out = tanh_mlp(tape, vars, random_matrix(3, 2, rng));
  tape.backward(out);
  CHECK(tape.replay_matches());
  const std::vector<int>& trace = tape.backward_trace();
  REQUIRE(!trace.empty());
  CHECK(trace.front() == out.id());
  for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] < trace[i - 1]);
}

TEST_CASE("gradients accumulate over shared nodes") {
  Tape tape;
  const Var x = tape.variable(Matrix::Constant(1, 1, 2.0));
  const Var y = x + x;
  const Var z = cwise_product(y, x);  // 2 x^2
  tape.backward(z);
  CHECK(tape.grad(x)(0, 0) == 8.0);
}

TEST_CASE("param set flatten round trip") {
  Rng rng = make_rng(2, Stream::Init);
  ParamSet p = tanh_mlp_params(rng);
  const Eigen::VectorXd flat = p.flatten();
  CHECK(flat.size() == p.num_scalars());
  ParamSet q = p.zeros_like();
  CHECK(q.same_layout(p));
  q.assign_flat(flat);
  CHECK(q == p);
}
