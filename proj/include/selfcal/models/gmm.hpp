#pragma once

#include "selfcal/sde.hpp"
#include "selfcal/types.hpp"

#include <Eigen/Dense>

#include <vector>

namespace selfcal {

struct GmmComponent {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
  double weight = 1.0;
};

// Class-conditional Gaussian mixture: p(x) = sum_y prior_y sum_j w_yj N(x; mu_yj, C_yj).
struct GmmSpec {
  std::vector<std::vector<GmmComponent>> classes;
  std::vector<double> priors;

  int num_classes() const { return static_cast<int>(classes.size()); }
  // Throws InvalidArgument on bad weights, SingularCovariance on a
  // covariance that is not symmetric positive definite.
  void validate() const;
};

// Two interleaved classes of four isotropic components (sigma 0.8) spanning
// the [-12, 12] x [-8, 8] evaluation box.
GmmSpec default_toy_gmm();

// Ground truth for the mixture convolved with N(0, noise_var I), i.e. the
// perturbed marginal at a time with sigma(t)^2 = noise_var.
struct OracleScores {
  Point unconditional = Point::Zero();
  std::vector<Point> conditional;     // grad_x log p(x | y)
  std::vector<Point> posterior_grad;  // grad_x log p(y | x)
  Eigen::VectorXd posterior;          // p(y | x)
};

OracleScores gmm_oracle_scores(const GmmSpec& spec, const Point& x, double noise_var);
OracleScores gmm_oracle_scores(const GmmSpec& spec, const NoiseSchedule& schedule, const Point& x, double t);

double gmm_log_density(const GmmSpec& spec, const Point& x, double noise_var);
double gmm_class_log_density(const GmmSpec& spec, int label, const Point& x, double noise_var);

// Batched unconditional oracle score, rows x 2.
Points gmm_score(const GmmSpec& spec, const Points& x, double noise_var);
// Batched conditional oracle score for one class.
Points gmm_class_score(const GmmSpec& spec, int label, const Points& x, double noise_var);

struct LabeledPoints {
  Points x;
  Labels labels;
};

LabeledPoints sample_gmm(const GmmSpec& spec, Eigen::Index n, Rng& rng);
Points sample_gmm_class(const GmmSpec& spec, int label, Eigen::Index n, Rng& rng);

}  // namespace selfcal
