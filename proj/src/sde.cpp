#include "selfcal/sde.hpp"

#include "selfcal/error.hpp"

#include <cmath>
#include <string>

namespace selfcal {

void NoiseSchedule::validate() const {
  if (!(sigma_min > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma_min must be positive");
  if (!(sigma_max > sigma_min)) throw Error(ErrorCode::InvalidArgument, "sigma_max must exceed sigma_min");
  if (!(horizon > 0.0)) throw Error(ErrorCode::InvalidArgument, "horizon must be positive");
}

double NoiseSchedule::sigma(double t) const {
  if (!(t >= 0.0 && t <= horizon)) {
    throw Error(ErrorCode::Domain, "t=" + std::to_string(t) + " outside [0, " + std::to_string(horizon) + "]");
  }
  if (t == 0.0) return sigma_min;
  if (t == horizon) return sigma_max;
  return sigma_min * std::pow(sigma_max / sigma_min, t / horizon);
}

Eigen::VectorXd NoiseSchedule::sigma(const Eigen::VectorXd& t) const {
  return t.unaryExpr([this](double v) { return sigma(v); });
}

double NoiseSchedule::diffusion_sq(double t) const {
  const double s = sigma(t);
  return 2.0 * s * s * std::log(sigma_max / sigma_min) / horizon;
}

Points perturb(const NoiseSchedule& schedule, const Points& x0, const Eigen::VectorXd& t, const Points& noise) {
  if (x0.rows() != t.size() || noise.rows() != x0.rows()) {
    throw Error(ErrorCode::InvalidArgument, "perturb: row counts differ");
  }
  return x0 + (noise.array().colwise() * schedule.sigma(t).array()).matrix();
}

Point perturb(const NoiseSchedule& schedule, const Point& x0, double t, const Point& noise) {
  return x0 + schedule.sigma(t) * noise;
}

Points kernel_score(const NoiseSchedule& schedule, const Points& xt, const Points& x0, const Eigen::VectorXd& t) {
  if (x0.rows() != t.size() || xt.rows() != x0.rows()) {
    throw Error(ErrorCode::InvalidArgument, "kernel_score: row counts differ");
  }
  const Eigen::ArrayXd inv_var = schedule.sigma(t).array().square().inverse();
  return ((x0 - xt).array().colwise() * inv_var).matrix();
}

Point kernel_score(const NoiseSchedule& schedule, const Point& xt, const Point& x0, double t) {
  const double s = schedule.sigma(t);
  return (x0 - xt) / (s * s);
}

void SamplerConfig::validate() const {
  if (n_steps < 1) throw Error(ErrorCode::InvalidArgument, "n_steps must be >= 1");
  if (!(corrector_snr > 0.0)) throw Error(ErrorCode::InvalidArgument, "corrector_snr must be positive");
  if (corrector_steps < 0) throw Error(ErrorCode::InvalidArgument, "corrector_steps must be >= 0");
}

namespace {

void check_finite(const Points& x, int step) {
  if (!x.allFinite()) {
    throw Error(ErrorCode::Diverged, "non-finite sample coordinate at step " + std::to_string(step));
  }
}

Points evaluate_score(const ScoreFn& score, const Points& x, double t, int step) {
  Points s = score(x, t);
  if (s.rows() != x.rows()) throw Error(ErrorCode::InvalidArgument, "score function changed the batch size");
  if (!s.allFinite()) {
    throw Error(ErrorCode::Diverged, "non-finite score at step " + std::to_string(step));
  }
  return s;
}

}  // namespace

void langevin_corrector_step(const Points& grad, double snr, Points& x, Rng& rng) {
  const Points z = standard_normal_points(x.rows(), rng);
  const double grad_norm = grad.rowwise().norm().mean();
  if (grad_norm == 0.0) return;
  const double ratio = snr * z.rowwise().norm().mean() / grad_norm;
  const double eps = 2.0 * ratio * ratio;
  x += eps * grad + std::sqrt(2.0 * eps) * z;
}

Points pc_sample(const ScoreFn& score, const SamplerConfig& config, const NoiseSchedule& schedule,
                 Eigen::Index n_samples) {
  config.validate();
  schedule.validate();
  if (!(config.end_time >= 0.0 && config.end_time < schedule.horizon)) {
    throw Error(ErrorCode::Domain, "end_time must lie in [0, T)");
  }
  Rng rng = make_rng(config.seed, Stream::Sampler, config.salt);
  Points x = schedule.sigma_max * standard_normal_points(n_samples, rng);

  const double dt = (schedule.horizon - config.end_time) / config.n_steps;
  for (int step = 0; step < config.n_steps; ++step) {
    const double t = schedule.horizon - step * dt;
    const double t_next = step + 1 == config.n_steps ? config.end_time : t - dt;

    // Reverse-time Euler-Maruyama with zero drift: dx = g^2 s dt + g dw.
    const double g2 = schedule.diffusion_sq(t);
    const Points s = evaluate_score(score, x, t, step);
    x += g2 * dt * s + std::sqrt(g2 * dt) * standard_normal_points(n_samples, rng);
    check_finite(x, step);

    for (int c = 0; c < config.corrector_steps; ++c) {
      langevin_corrector_step(evaluate_score(score, x, t_next, step), config.corrector_snr, x, rng);
      check_finite(x, step);
    }
  }
  return x;
}

}  // namespace selfcal
