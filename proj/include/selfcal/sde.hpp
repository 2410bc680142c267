#pragma once

#include "selfcal/types.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>

namespace selfcal {

// Variance-exploding noise schedule with geometric sigma(t) on [0, T].
// The DSM weight is lambda(t) = sigma(t)^2.
struct NoiseSchedule {
  double sigma_min = 0.01;
  double sigma_max = 12.0;
  double horizon = 1.0;

  void validate() const;

  double sigma(double t) const;
  Eigen::VectorXd sigma(const Eigen::VectorXd& t) const;
  // d[sigma^2]/dt, the squared diffusion coefficient g(t)^2.
  double diffusion_sq(double t) const;
  double weight(double t) const { const double s = sigma(t); return s * s; }
};

// Lower end of the training time range, t ~ U[kTrainEps, T].
inline constexpr double kTrainEps = 1e-3;

// x0 + sigma(t) * noise, row by row.
Points perturb(const NoiseSchedule& schedule, const Points& x0, const Eigen::VectorXd& t, const Points& noise);
Point perturb(const NoiseSchedule& schedule, const Point& x0, double t, const Point& noise);

// Score of N(x_t; x0, sigma(t)^2 I) in x_t: (x0 - x_t) / sigma(t)^2.
Points kernel_score(const NoiseSchedule& schedule, const Points& xt, const Points& x0, const Eigen::VectorXd& t);
Point kernel_score(const NoiseSchedule& schedule, const Point& xt, const Point& x0, double t);

struct SamplerConfig {
  int n_steps = 1000;
  double corrector_snr = 0.16;
  int corrector_steps = 1;
  // Final time of the reverse integration; sigma(end_time) is the residual
  // noise level of the returned samples.
  double end_time = kTrainEps;
  std::uint64_t seed = 0;
  // Distinguishes independent sampling runs that share a seed.
  std::uint64_t salt = 0;

  void validate() const;
};

// Batched score: every row of x is a chain, all chains share the time t.
using ScoreFn = std::function<Points(const Points& x, double t)>;

// One Langevin step for a batch of chains, x += eps * grad + sqrt(2 eps) * z,
// with eps = 2 (snr * mean|z| / mean|grad|)^2 over the batch. A batch whose
// gradients are all zero is left unchanged.
void langevin_corrector_step(const Points& grad, double snr, Points& x, Rng& rng);

// Predictor-corrector reverse diffusion. Starts from N(0, sigma_max^2 I) at
// t = T, takes n_steps Euler-Maruyama steps of the reverse SDE down to
// end_time, each followed by corrector_steps Langevin steps whose size is set
// from corrector_snr.
Points pc_sample(const ScoreFn& score, const SamplerConfig& config, const NoiseSchedule& schedule,
                 Eigen::Index n_samples);

}  // namespace selfcal
