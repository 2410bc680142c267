#include "selfcal/models/mlp.hpp"

#include "selfcal/error.hpp"

#include <cmath>

namespace selfcal {

using diff::Dual;
using diff::Matrix;
using diff::Var;

const char* to_string(Activation a) {
  switch (a) {
    case Activation::Softplus: return "softplus";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

Activation activation_from_string(const std::string& name) {
  if (name == "softplus") return Activation::Softplus;
  if (name == "tanh") return Activation::Tanh;
  throw Error(ErrorCode::InvalidArgument, "unknown activation '" + name + "' (ReLU is not C2)");
}

void NetConfig::validate() const {
  if (hidden < 1 || depth < 1) throw Error(ErrorCode::InvalidArgument, "network needs hidden >= 1 and depth >= 1");
  if (time_features < 2 || time_features % 2 != 0) {
    throw Error(ErrorCode::InvalidArgument, "time_features must be a positive even number");
  }
  if (!(max_frequency > 0.0)) throw Error(ErrorCode::InvalidArgument, "max_frequency must be positive");
  if (!(data_scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "data_scale must be positive");
}

Matrix time_features(const NoiseSchedule& schedule, const Eigen::VectorXd& t, int n_features, double max_frequency) {
  const int n_freq = n_features / 2;
  Matrix out(t.size(), n_features);
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const double ls = std::log(schedule.sigma(t(i)));
    for (int j = 0; j < n_freq; ++j) {
      const double w = max_frequency / 32.0 * std::pow(32.0, n_freq == 1 ? 0.0 : static_cast<double>(j) / (n_freq - 1));
      out(i, 2 * j) = std::sin(w * ls);
      out(i, 2 * j + 1) = std::cos(w * ls);
    }
  }
  return out;
}

Eigen::VectorXd input_scale(const NoiseSchedule& schedule, const NetConfig& config, const Eigen::VectorXd& t) {
  const Eigen::ArrayXd s = schedule.sigma(t).array();
  return (config.data_scale * config.data_scale + s.square()).rsqrt().matrix();
}

void init_mlp(diff::ParamSet& params, const NetConfig& config, int output_dim, Rng& rng, const std::string& prefix) {
  std::normal_distribution<double> normal(0.0, 1.0);
  int fan_in = config.input_dim();
  for (int layer = 0; layer <= config.depth; ++layer) {
    const bool last = layer == config.depth;
    const int fan_out = last ? output_dim : config.hidden;
    Matrix w(fan_in, fan_out);
    if (last && config.zero_init_output) {
      w.setZero();
    } else {
      const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = scale * normal(rng);
    }
    const std::string name = prefix + "l" + std::to_string(layer);
    params.add(name + ".weight", std::move(w));
    params.add(name + ".bias", Matrix::Zero(1, fan_out));
    fan_in = fan_out;
  }
}

namespace {

void check_layout(std::span<const Var> vars, const NetConfig& config, std::span<const Var> offsets) {
  if (vars.size() < static_cast<std::size_t>(2 * (config.depth + 1))) {
    throw Error(ErrorCode::InvalidArgument, "mlp_forward: too few parameter nodes");
  }
  if (!offsets.empty() && offsets.size() != static_cast<std::size_t>(config.depth)) {
    throw Error(ErrorCode::InvalidArgument, "mlp_forward: need one offset per hidden layer");
  }
}

}  // namespace

Dual mlp_forward(std::span<const Var> vars, const NetConfig& config, const Dual& input,
                 std::span<const Var> hidden_offsets) {
  check_layout(vars, config, hidden_offsets);
  Dual h = input;
  for (int layer = 0; layer < config.depth; ++layer) {
    h = diff::affine(h, vars[2 * layer], vars[2 * layer + 1]);
    if (!hidden_offsets.empty()) h = diff::add_constant_in_x(h, hidden_offsets[static_cast<std::size_t>(layer)]);
    h = config.activation == Activation::Softplus ? diff::softplus(h) : diff::tanh(h);
  }
  return diff::affine(h, vars[2 * config.depth], vars[2 * config.depth + 1]);
}

Var mlp_forward(std::span<const Var> vars, const NetConfig& config, Var input, std::span<const Var> hidden_offsets) {
  check_layout(vars, config, hidden_offsets);
  Var h = input;
  for (int layer = 0; layer < config.depth; ++layer) {
    h = diff::add_bias(diff::matmul(h, vars[2 * layer]), vars[2 * layer + 1]);
    if (!hidden_offsets.empty()) h = h + hidden_offsets[static_cast<std::size_t>(layer)];
    h = config.activation == Activation::Softplus ? diff::softplus(h) : diff::tanh(h);
  }
  return diff::add_bias(diff::matmul(h, vars[2 * config.depth]), vars[2 * config.depth + 1]);
}

Dual network_input(diff::Tape& tape, const NoiseSchedule& schedule, const NetConfig& config, const Points& x,
                   const Eigen::VectorXd& t) {
  if (x.rows() != t.size()) throw Error(ErrorCode::InvalidArgument, "network_input: x and t row counts differ");
  const Eigen::VectorXd c_in = input_scale(schedule, config, t);
  const Matrix feats = time_features(schedule, t, config.time_features, config.max_frequency);
  const Eigen::Index cols = config.input_dim();
  Matrix value(x.rows(), cols);
  value << (x.array().colwise() * c_in.array()).matrix(), feats;
  Dual d;
  d.value = tape.constant(std::move(value));
  for (int k = 0; k < 2; ++k) {
    Matrix tangent = Matrix::Zero(x.rows(), cols);
    tangent.col(k) = c_in;
    d.tangent[static_cast<std::size_t>(k)] = tape.constant(std::move(tangent));
  }
  return d;
}

Var network_input_value(diff::Tape& tape, const NoiseSchedule& schedule, const NetConfig& config, const Points& x,
                        const Eigen::VectorXd& t) {
  if (x.rows() != t.size()) throw Error(ErrorCode::InvalidArgument, "network_input: x and t row counts differ");
  const Eigen::VectorXd c_in = input_scale(schedule, config, t);
  Matrix value(x.rows(), config.input_dim());
  value << (x.array().colwise() * c_in.array()).matrix(), time_features(schedule, t, config.time_features, config.max_frequency);
  return tape.constant(std::move(value));
}

}  // namespace selfcal
