#pragma once

#include "selfcal/diffmath/dual.hpp"
#include "selfcal/diffmath/params.hpp"
#include "selfcal/sde.hpp"
#include "selfcal/types.hpp"

#include <span>
#include <string>

namespace selfcal {

enum class Activation { Softplus, Tanh };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

// Architecture shared by every network in the lab: an MLP over
// [c_in(t) * x | time features], with c_in(t) = 1 / sqrt(data_scale^2 + sigma(t)^2)
// and sinusoidal features of log sigma(t).
struct NetConfig {
  int hidden = 128;
  int depth = 3;
  int time_features = 16;
  // Embedding frequencies are spaced geometrically over [max_frequency / 32, max_frequency].
  double max_frequency = 8.0;
  double data_scale = 5.0;
  Activation activation = Activation::Softplus;
  bool zero_init_output = true;

  void validate() const;
  int input_dim() const { return 2 + time_features; }
};

// Sinusoidal embedding of log sigma(t); rows x time_features.
diff::Matrix time_features(const NoiseSchedule& schedule, const Eigen::VectorXd& t, int n_features,
                           double max_frequency = 8.0);

// Per-row input scale c_in(t).
Eigen::VectorXd input_scale(const NoiseSchedule& schedule, const NetConfig& config, const Eigen::VectorXd& t);

// Weights named "<prefix>l<i>.weight" (in x out) and "<prefix>l<i>.bias" (1 x out),
// depth hidden layers plus the output layer.
void init_mlp(diff::ParamSet& params, const NetConfig& config, int output_dim, Rng& rng,
              const std::string& prefix = "");

// Dual MLP forward from already-seeded inputs. `vars` starts at the first
// MLP weight; `hidden_offsets`, if non-empty, holds one rows x hidden node per
// hidden layer added to its pre-activation (x-independent terms).
diff::Dual mlp_forward(std::span<const diff::Var> vars, const NetConfig& config, const diff::Dual& input,
                       std::span<const diff::Var> hidden_offsets = {});

// Value-only MLP forward.
diff::Var mlp_forward(std::span<const diff::Var> vars, const NetConfig& config, diff::Var input,
                      std::span<const diff::Var> hidden_offsets = {});

// Network input [c_in x | features] as a dual whose tangents are the
// derivatives along the two raw x axes.
diff::Dual network_input(diff::Tape& tape, const NoiseSchedule& schedule, const NetConfig& config,
                         const Points& x, const Eigen::VectorXd& t);
diff::Var network_input_value(diff::Tape& tape, const NoiseSchedule& schedule, const NetConfig& config,
                              const Points& x, const Eigen::VectorXd& t);

inline Eigen::VectorXd broadcast_time(double t, Eigen::Index n) { return Eigen::VectorXd::Constant(n, t); }

}  // namespace selfcal
