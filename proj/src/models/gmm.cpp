#include "selfcal/models/gmm.hpp"

#include "selfcal/error.hpp"

#include <cmath>
#include <numbers>
#include <limits>
#include <numeric>

namespace selfcal {

namespace {

constexpr double kWeightTol = 1e-9;

struct Inflated {
  Eigen::Matrix2d precision;
  double log_norm;  // log of the Gaussian normalizer including the weight
};

Inflated inflate(const GmmComponent& c, double noise_var) {
  const Eigen::Matrix2d cov = c.cov + noise_var * Eigen::Matrix2d::Identity();
  const Eigen::LLT<Eigen::Matrix2d> llt(cov);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularCovariance, "covariance is not positive definite");
  const double det = cov.determinant();
  if (!(det > 0.0)) throw Error(ErrorCode::SingularCovariance, "covariance determinant is not positive");
  return {cov.inverse(), std::log(c.weight) - std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det)};
}

double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double a : v) m = std::max(m, a);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double a : v) s += std::exp(a - m);
  return m + std::log(s);
}

// log p(x | y) and grad_x log p(x | y) for one class.
std::pair<double, Point> class_terms(const std::vector<GmmComponent>& comps, const Point& x, double noise_var) {
  std::vector<double> logs(comps.size());
  std::vector<Point> grads(comps.size());
  for (std::size_t j = 0; j < comps.size(); ++j) {
    const Inflated g = inflate(comps[j], noise_var);
    const Point d = x - comps[j].mean;
    logs[j] = g.log_norm - 0.5 * d.dot(g.precision * d);
    grads[j] = -(g.precision * d);
  }
  const double lse = log_sum_exp(logs);
  Point score = Point::Zero();
  for (std::size_t j = 0; j < comps.size(); ++j) score += std::exp(logs[j] - lse) * grads[j];
  return {lse, score};
}

}  // namespace

void GmmSpec::validate() const {
  if (classes.empty()) throw Error(ErrorCode::InvalidArgument, "mixture has no classes");
  if (priors.size() != classes.size()) throw Error(ErrorCode::InvalidArgument, "one prior per class required");
  const double prior_sum = std::accumulate(priors.begin(), priors.end(), 0.0);
  if (std::abs(prior_sum - 1.0) > kWeightTol) throw Error(ErrorCode::InvalidArgument, "class priors must sum to 1");
  for (double p : priors) {
    if (!(p > 0.0)) throw Error(ErrorCode::InvalidArgument, "class priors must be positive");
  }
  for (const auto& comps : classes) {
    if (comps.empty()) throw Error(ErrorCode::InvalidArgument, "class without components");
    double w = 0.0;
    for (const auto& c : comps) {
      if (!(c.weight > 0.0)) throw Error(ErrorCode::InvalidArgument, "component weights must be positive");
      w += c.weight;
      if ((c.cov - c.cov.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        throw Error(ErrorCode::SingularCovariance, "covariance is not symmetric");
      }
      const Eigen::LLT<Eigen::Matrix2d> llt(c.cov);
      if (llt.info() != Eigen::Success || !(c.cov.determinant() > 0.0)) {
        throw Error(ErrorCode::SingularCovariance, "covariance is not positive definite");
      }
    }
    if (std::abs(w - 1.0) > kWeightTol) throw Error(ErrorCode::InvalidArgument, "component weights must sum to 1");
  }
}

GmmSpec default_toy_gmm() {
  const double var = 0.8 * 0.8;
  const std::vector<std::vector<Point>> means = {
      {{-8.0, -4.0}, {-2.5, 4.0}, {3.0, -4.0}, {8.5, 4.0}},
      {{-8.5, 4.0}, {-3.0, -4.0}, {2.5, 4.0}, {8.0, -4.0}},
  };
  GmmSpec spec;
  for (const auto& class_means : means) {
    std::vector<GmmComponent> comps;
    for (const Point& m : class_means) comps.push_back({m, var * Eigen::Matrix2d::Identity(), 0.25});
    spec.classes.push_back(std::move(comps));
  }
  spec.priors = {0.5, 0.5};
  return spec;
}

OracleScores gmm_oracle_scores(const GmmSpec& spec, const Point& x, double noise_var) {
  const int k = spec.num_classes();
  std::vector<double> joint(static_cast<std::size_t>(k));
  OracleScores out;
  out.conditional.resize(static_cast<std::size_t>(k));
  out.posterior_grad.resize(static_cast<std::size_t>(k));
  out.posterior.resize(k);
  for (int y = 0; y < k; ++y) {
    auto [log_cond, score] = class_terms(spec.classes[static_cast<std::size_t>(y)], x, noise_var);
    joint[static_cast<std::size_t>(y)] = std::log(spec.priors[static_cast<std::size_t>(y)]) + log_cond;
    out.conditional[static_cast<std::size_t>(y)] = score;
  }
  const double log_marginal = log_sum_exp(joint);
  for (int y = 0; y < k; ++y) {
    out.posterior(y) = std::exp(joint[static_cast<std::size_t>(y)] - log_marginal);
    out.unconditional += out.posterior(y) * out.conditional[static_cast<std::size_t>(y)];
  }
  // sum_y' p(y'|x) (s_y - s_y') equals s_y - s but stays accurate where p(y|x) saturates at 1.
  for (int y = 0; y < k; ++y) {
    Point g = Point::Zero();
    for (int o = 0; o < k; ++o) {
      if (o == y) continue;
      g += out.posterior(o) * (out.conditional[static_cast<std::size_t>(y)] - out.conditional[static_cast<std::size_t>(o)]);
    }
    out.posterior_grad[static_cast<std::size_t>(y)] = g;
  }
  return out;
}

OracleScores gmm_oracle_scores(const GmmSpec& spec, const NoiseSchedule& schedule, const Point& x, double t) {
  const double s = schedule.sigma(t);
  return gmm_oracle_scores(spec, x, s * s);
}

double gmm_class_log_density(const GmmSpec& spec, int label, const Point& x, double noise_var) {
  if (label < 0 || label >= spec.num_classes()) throw Error(ErrorCode::InvalidArgument, "class index out of range");
  return class_terms(spec.classes[static_cast<std::size_t>(label)], x, noise_var).first;
}

double gmm_log_density(const GmmSpec& spec, const Point& x, double noise_var) {
  std::vector<double> joint;
  for (int y = 0; y < spec.num_classes(); ++y) {
    joint.push_back(std::log(spec.priors[static_cast<std::size_t>(y)]) + gmm_class_log_density(spec, y, x, noise_var));
  }
  return log_sum_exp(joint);
}

Points gmm_score(const GmmSpec& spec, const Points& x, double noise_var) {
  Points out(x.rows(), 2);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out.row(i) = gmm_oracle_scores(spec, x.row(i).transpose(), noise_var).unconditional.transpose();
  }
  return out;
}

Points gmm_class_score(const GmmSpec& spec, int label, const Points& x, double noise_var) {
  if (label < 0 || label >= spec.num_classes()) throw Error(ErrorCode::InvalidArgument, "class index out of range");
  Points out(x.rows(), 2);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out.row(i) = class_terms(spec.classes[static_cast<std::size_t>(label)], x.row(i).transpose(), noise_var)
                     .second.transpose();
  }
  return out;
}

namespace {

Point draw_component(const std::vector<GmmComponent>& comps, Rng& rng) {
  std::vector<double> w;
  for (const auto& c : comps) w.push_back(c.weight);
  std::discrete_distribution<int> pick(w.begin(), w.end());
  const GmmComponent& c = comps[static_cast<std::size_t>(pick(rng))];
  const Eigen::Matrix2d l = Eigen::LLT<Eigen::Matrix2d>(c.cov).matrixL();
  std::normal_distribution<double> normal(0.0, 1.0);
  const double z0 = normal(rng);
  const double z1 = normal(rng);
  return c.mean + l * Point(z0, z1);
}

}  // namespace

LabeledPoints sample_gmm(const GmmSpec& spec, Eigen::Index n, Rng& rng) {
  spec.validate();
  std::discrete_distribution<int> pick_class(spec.priors.begin(), spec.priors.end());
  LabeledPoints out{Points(n, 2), Labels(static_cast<std::size_t>(n))};
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = pick_class(rng);
    out.labels[static_cast<std::size_t>(i)] = y;
    out.x.row(i) = draw_component(spec.classes[static_cast<std::size_t>(y)], rng).transpose();
  }
  return out;
}

Points sample_gmm_class(const GmmSpec& spec, int label, Eigen::Index n, Rng& rng) {
  spec.validate();
  if (label < 0 || label >= spec.num_classes()) throw Error(ErrorCode::InvalidArgument, "class index out of range");
  Points out(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.row(i) = draw_component(spec.classes[static_cast<std::size_t>(label)], rng).transpose();
  }
  return out;
}

}  // namespace selfcal
