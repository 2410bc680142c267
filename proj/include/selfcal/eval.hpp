#pragma once

#include "selfcal/error.hpp"
#include "selfcal/models/classifier.hpp"
#include "selfcal/models/gmm.hpp"
#include "selfcal/types.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace selfcal {

// Rectangular evaluation grid, inclusive of both ends on each axis.
struct GridSpec {
  double x_min = -12.0;
  double x_max = 12.0;
  double y_min = -8.0;
  double y_max = 8.0;
  double step = 0.5;

  void validate() const;
  int nx() const;
  int ny() const;
  int node_count() const { return nx() * ny(); }
  // Node coordinates, x varying fastest.
  Points nodes() const;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

// One vector per grid node for each class.
struct GradientField {
  GridSpec grid;
  std::vector<Points> per_class;

  int num_classes() const { return static_cast<int>(per_class.size()); }
};

inline constexpr double kCosineSkipNorm = 1e-12;

struct CosineResult {
  double mean = 0.0;  // over counted rows; 0 when every row was skipped
  int counted = 0;
  int skipped = 0;
};

// Row-wise cosine similarity, skipping rows where either vector has norm
// below kCosineSkipNorm.
template <typename DerivedA, typename DerivedB>
CosineResult mean_cosine(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorCode::GridMismatch, "cosine: shape mismatch");
  CosineResult r;
  Scalar total = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const Scalar na = a.row(i).norm();
    const Scalar nb = b.row(i).norm();
    if (na < Scalar(kCosineSkipNorm) || nb < Scalar(kCosineSkipNorm)) {
      ++r.skipped;
      continue;
    }
    total += std::clamp<Scalar>(a.row(i).dot(b.row(i)) / (na * nb), Scalar(-1), Scalar(1));
    ++r.counted;
  }
  r.mean = r.counted > 0 ? static_cast<double>(total / r.counted) : 0.0;
  return r;
}

struct FieldMetrics {
  double mse = 0.0;
  double cs = 0.0;
  int skipped = 0;
};

// MSE: mean squared Euclidean error over nodes and classes. CS: mean cosine
// over nodes and classes with near-zero vectors skipped.
FieldMetrics grad_field_metrics(const GradientField& estimated, const GradientField& truth);

// Mean cosine between (unconditional truth + estimated classifier gradient)
// and the true conditional score, over nodes and classes.
CosineResult cond_score_cs(const GradientField& classifier_grad, const Points& unconditional_truth,
                           const GradientField& conditional_truth);

template <typename Derived>
void mean_and_cov(const Eigen::MatrixBase<Derived>& x, Eigen::Matrix<typename Derived::Scalar, 2, 1>& mu,
                  Eigen::Matrix<typename Derived::Scalar, 2, 2>& cov) {
  using Scalar = typename Derived::Scalar;
  mu = x.colwise().mean().transpose();
  const auto centered = (x.rowwise() - mu.transpose()).eval();
  cov = (centered.transpose() * centered) / Scalar(x.rows() - 1);
}

// Frechet distance between Gaussians fitted to two 2D point sets:
// |mu_r - mu_g|^2 + Tr(C_r + C_g - 2 (C_r C_g)^(1/2)).
template <typename DerivedR, typename DerivedG>
typename DerivedR::Scalar frechet_2d(const Eigen::MatrixBase<DerivedR>& real, const Eigen::MatrixBase<DerivedG>& gen) {
  using Scalar = typename DerivedR::Scalar;
  using Vec = Eigen::Matrix<Scalar, 2, 1>;
  using Mat = Eigen::Matrix<Scalar, 2, 2>;
  if (real.rows() < 2 || gen.rows() < 2) throw Error(ErrorCode::InsufficientSamples, "need at least 2 points per set");
  Vec mu_r, mu_g;
  Mat c_r, c_g;
  mean_and_cov(real, mu_r, c_r);
  mean_and_cov(gen, mu_g, c_g);
  // Tr (C_r C_g)^(1/2) = Tr (C_r^(1/2) C_g C_r^(1/2))^(1/2), a symmetric PSD root.
  const Eigen::SelfAdjointEigenSolver<Mat> root_r(c_r);
  const Mat sqrt_r = root_r.operatorSqrt();
  const Mat inner = sqrt_r * c_g * sqrt_r;
  const Eigen::SelfAdjointEigenSolver<Mat> eig(Scalar(0.5) * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  Scalar tr_sqrt = 0;
  for (int i = 0; i < 2; ++i) tr_sqrt += std::sqrt(std::max(eig.eigenvalues()(i), Scalar(0)));
  const Scalar d = (mu_r - mu_g).squaredNorm() + c_r.trace() + c_g.trace() - Scalar(2) * tr_sqrt;
  return std::max(d, Scalar(0));
}

struct DensityCoverage {
  double density = 0.0;
  double coverage = 0.0;
};

// k-NN manifold metrics with balls of radius kNN_k(r) around each real point
// (k-th nearest other real point).
template <typename DerivedR, typename DerivedG>
DensityCoverage density_coverage(const Eigen::MatrixBase<DerivedR>& real, const Eigen::MatrixBase<DerivedG>& gen,
                                 int k) {
  using Scalar = typename DerivedR::Scalar;
  const Eigen::Index nr = real.rows();
  const Eigen::Index ng = gen.rows();
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  if (nr <= k) throw Error(ErrorCode::KTooLarge, "need more than k real points");
  if (ng == 0) throw Error(ErrorCode::InsufficientSamples, "generated set is empty");

  std::vector<Scalar> radius_sq(static_cast<std::size_t>(nr));
  std::vector<Scalar> d(static_cast<std::size_t>(nr - 1));
  for (Eigen::Index i = 0; i < nr; ++i) {
    std::size_t m = 0;
    for (Eigen::Index j = 0; j < nr; ++j) {
      if (j != i) d[m++] = (real.row(i) - real.row(j)).squaredNorm();
    }
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    radius_sq[static_cast<std::size_t>(i)] = d[static_cast<std::size_t>(k - 1)];
  }

  long inside = 0;
  std::vector<bool> covered(static_cast<std::size_t>(nr), false);
  for (Eigen::Index g = 0; g < ng; ++g) {
    for (Eigen::Index i = 0; i < nr; ++i) {
      if ((gen.row(g) - real.row(i)).squaredNorm() <= radius_sq[static_cast<std::size_t>(i)]) {
        ++inside;
        covered[static_cast<std::size_t>(i)] = true;
      }
    }
  }
  DensityCoverage out;
  out.density = static_cast<double>(inside) / (static_cast<double>(k) * static_cast<double>(ng));
  out.coverage = static_cast<double>(std::count(covered.begin(), covered.end(), true)) / static_cast<double>(nr);
  return out;
}

// Unweighted mean of per-class metric values.
double intra_mean(const std::vector<double>& per_class);

double intra_fd2(const std::vector<Points>& real_by_class, const std::vector<Points>& gen_by_class);
DensityCoverage intra_density_coverage(const std::vector<Points>& real_by_class,
                                       const std::vector<Points>& gen_by_class, int k);

inline constexpr int kEceBuckets = 20;

// Expected calibration error over buckets [(i-1)/N, i/N); confidence 1.0
// falls in the last bucket.
double ece(const Eigen::VectorXd& confidence, const std::vector<bool>& correct, int n_buckets = kEceBuckets);
// ECE of a classifier's argmax predictions at time t on a labeled set.
double classifier_ece(const Classifier& cls, const Points& x, const Labels& labels, double t,
                      int n_buckets = kEceBuckets);

// --- fields -----------------------------------------------------------------

// grad_x log p(y | x, t) of a classifier for every class.
GradientField classifier_gradient_field(const Classifier& cls, const GridSpec& grid, double t);
// Ground-truth grad_x log p(y | x, t) of the mixture.
GradientField oracle_gradient_field(const GmmSpec& spec, const NoiseSchedule& schedule, const GridSpec& grid, double t);
// Ground-truth conditional scores of the mixture.
GradientField oracle_conditional_field(const GmmSpec& spec, const NoiseSchedule& schedule, const GridSpec& grid,
                                       double t);
Points oracle_unconditional_field(const GmmSpec& spec, const NoiseSchedule& schedule, const GridSpec& grid, double t);

// CSV with header `class,x,y,gx,gy`.
std::string field_to_csv(const GradientField& field);

// Named scalar results. Serialized as a flat JSON object in key order.
struct MetricsReport {
  std::map<std::string, double> values;

  void set(const std::string& name, double v) { values[name] = v; }
  bool has(const std::string& name) const { return values.count(name) != 0; }
  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  // Throws InvalidArgument when a known metric is outside its range.
  void check_ranges() const;
};

}  // namespace selfcal
