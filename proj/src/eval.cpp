#include "selfcal/eval.hpp"

#include "selfcal/data.hpp"

#include <numeric>

namespace selfcal {

void GridSpec::validate() const {
  if (!(step > 0.0) || !(x_max >= x_min) || !(y_max >= y_min)) {
    throw Error(ErrorCode::InvalidArgument, "grid needs step > 0 and max >= min");
  }
}

int GridSpec::nx() const { return static_cast<int>(std::llround((x_max - x_min) / step)) + 1; }
int GridSpec::ny() const { return static_cast<int>(std::llround((y_max - y_min) / step)) + 1; }

Points GridSpec::nodes() const {
  validate();
  Points out(node_count(), 2);
  Eigen::Index r = 0;
  for (int j = 0; j < ny(); ++j) {
    for (int i = 0; i < nx(); ++i) {
      out(r, 0) = x_min + i * step;
      out(r, 1) = y_min + j * step;
      ++r;
    }
  }
  return out;
}

namespace {

void check_compatible(const GradientField& a, const GradientField& b) {
  if (!(a.grid == b.grid) || a.per_class.size() != b.per_class.size()) {
    throw Error(ErrorCode::GridMismatch, "fields differ in grid or class count");
  }
  for (std::size_t c = 0; c < a.per_class.size(); ++c) {
    if (a.per_class[c].rows() != b.per_class[c].rows()) throw Error(ErrorCode::GridMismatch, "field sizes differ");
  }
}

Points stack(const std::vector<Points>& parts) {
  Eigen::Index n = 0;
  for (const Points& p : parts) n += p.rows();
  Points out(n, 2);
  Eigen::Index r = 0;
  for (const Points& p : parts) {
    out.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return out;
}

}  // namespace

FieldMetrics grad_field_metrics(const GradientField& estimated, const GradientField& truth) {
  check_compatible(estimated, truth);
  const Points e = stack(estimated.per_class);
  const Points t = stack(truth.per_class);
  if (e.rows() == 0) throw Error(ErrorCode::GridMismatch, "empty field");
  FieldMetrics m;
  m.mse = (e - t).rowwise().squaredNorm().mean();
  const CosineResult cs = mean_cosine(e, t);
  m.cs = cs.mean;
  m.skipped = cs.skipped;
  return m;
}

CosineResult cond_score_cs(const GradientField& classifier_grad, const Points& unconditional_truth,
                           const GradientField& conditional_truth) {
  check_compatible(classifier_grad, conditional_truth);
  std::vector<Points> estimated;
  for (const Points& g : classifier_grad.per_class) {
    if (g.rows() != unconditional_truth.rows()) throw Error(ErrorCode::GridMismatch, "unconditional field size");
    estimated.push_back(unconditional_truth + g);
  }
  return mean_cosine(stack(estimated), stack(conditional_truth.per_class));
}

double intra_mean(const std::vector<double>& per_class) {
  if (per_class.empty()) throw Error(ErrorCode::InsufficientSamples, "no classes to average");
  return std::accumulate(per_class.begin(), per_class.end(), 0.0) / static_cast<double>(per_class.size());
}

double intra_fd2(const std::vector<Points>& real_by_class, const std::vector<Points>& gen_by_class) {
  if (real_by_class.size() != gen_by_class.size()) throw Error(ErrorCode::InvalidArgument, "class count mismatch");
  std::vector<double> v;
  for (std::size_t c = 0; c < real_by_class.size(); ++c) v.push_back(frechet_2d(real_by_class[c], gen_by_class[c]));
  return intra_mean(v);
}

DensityCoverage intra_density_coverage(const std::vector<Points>& real_by_class,
                                       const std::vector<Points>& gen_by_class, int k) {
  if (real_by_class.size() != gen_by_class.size()) throw Error(ErrorCode::InvalidArgument, "class count mismatch");
  std::vector<double> dens;
  std::vector<double> cov;
  for (std::size_t c = 0; c < real_by_class.size(); ++c) {
    const DensityCoverage dc = density_coverage(real_by_class[c], gen_by_class[c], k);
    dens.push_back(dc.density);
    cov.push_back(dc.coverage);
  }
  return {intra_mean(dens), intra_mean(cov)};
}

double ece(const Eigen::VectorXd& confidence, const std::vector<bool>& correct, int n_buckets) {
  const Eigen::Index n = confidence.size();
  if (n == 0) throw Error(ErrorCode::EmptyTestSet, "no predictions");
  if (static_cast<Eigen::Index>(correct.size()) != n) throw Error(ErrorCode::InvalidArgument, "length mismatch");
  if (n_buckets < 1) throw Error(ErrorCode::InvalidArgument, "n_buckets must be >= 1");
  std::vector<double> conf_sum(static_cast<std::size_t>(n_buckets), 0.0);
  std::vector<double> hits(static_cast<std::size_t>(n_buckets), 0.0);
  std::vector<long> count(static_cast<std::size_t>(n_buckets), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double c = confidence(i);
    if (!(c >= 0.0 && c <= 1.0)) throw Error(ErrorCode::InvalidArgument, "confidence outside [0, 1]");
    const int b = std::min(static_cast<int>(std::floor(c * n_buckets)), n_buckets - 1);
    conf_sum[static_cast<std::size_t>(b)] += c;
    hits[static_cast<std::size_t>(b)] += correct[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    ++count[static_cast<std::size_t>(b)];
  }
  double total = 0.0;
  for (int b = 0; b < n_buckets; ++b) {
    const auto nb = static_cast<double>(count[static_cast<std::size_t>(b)]);
    if (nb == 0.0) continue;
    const double gap = std::abs(hits[static_cast<std::size_t>(b)] / nb - conf_sum[static_cast<std::size_t>(b)] / nb);
    total += nb / static_cast<double>(n) * gap;
  }
  return total;
}

double classifier_ece(const Classifier& cls, const Points& x, const Labels& labels, double t, int n_buckets) {
  if (x.rows() == 0) throw Error(ErrorCode::EmptyTestSet, "test set is empty");
  const diff::Matrix p = classifier_posterior(cls, x, t);
  Eigen::VectorXd conf(x.rows());
  std::vector<bool> correct(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index arg = 0;
    conf(i) = p.row(i).maxCoeff(&arg);
    correct[static_cast<std::size_t>(i)] = static_cast<int>(arg) == labels[static_cast<std::size_t>(i)];
  }
  return ece(conf, correct, n_buckets);
}

GradientField classifier_gradient_field(const Classifier& cls, const GridSpec& grid, double t) {
  const Points nodes = grid.nodes();
  const ClassifierEval eval = classifier_eval(cls, nodes, broadcast_time(t, nodes.rows()));
  GradientField f{grid, {}};
  for (int y = 0; y < cls.num_classes; ++y) f.per_class.push_back(posterior_log_grad(eval, y));
  return f;
}

namespace {

template <typename Select>
GradientField oracle_field(const GmmSpec& spec, const NoiseSchedule& schedule, const GridSpec& grid, double t,
                           Select select) {
  const Points nodes = grid.nodes();
  const double s = schedule.sigma(t);
  GradientField f{grid, std::vector<Points>(static_cast<std::size_t>(spec.num_classes()), Points(nodes.rows(), 2))};
  for (Eigen::Index i = 0; i < nodes.rows(); ++i) {
    const OracleScores o = gmm_oracle_scores(spec, nodes.row(i).transpose(), s * s);
    for (int y = 0; y < spec.num_classes(); ++y) f.per_class[static_cast<std::size_t>(y)].row(i) = select(o, y).transpose();
  }
  return f;
}

}  // namespace

GradientField oracle_gradient_field(const GmmSpec& spec, const NoiseSchedule& schedule, const GridSpec& grid,
                                    double t) {
  return oracle_field(spec, schedule, grid, t,
                      [](const OracleScores& o, int y) { return o.posterior_grad[static_cast<std::size_t>(y)]; });
}

GradientField oracle_conditional_field(const GmmSpec& spec, const NoiseSchedule& schedule, const GridSpec& grid,
                                       double t) {
  return oracle_field(spec, schedule, grid, t,
                      [](const OracleScores& o, int y) { return o.conditional[static_cast<std::size_t>(y)]; });
}

Points oracle_unconditional_field(const GmmSpec& spec, const NoiseSchedule& schedule, const GridSpec& grid, double t) {
  const double s = schedule.sigma(t);
  return gmm_score(spec, grid.nodes(), s * s);
}

std::string field_to_csv(const GradientField& field) {
  const Points nodes = field.grid.nodes();
  std::string out = "class,x,y,gx,gy\n";
  for (int y = 0; y < field.num_classes(); ++y) {
    const Points& g = field.per_class[static_cast<std::size_t>(y)];
    for (Eigen::Index i = 0; i < nodes.rows(); ++i) {
      out += std::to_string(y) + ',' + format_double(nodes(i, 0)) + ',' + format_double(nodes(i, 1)) + ',' +
             format_double(g(i, 0)) + ',' + format_double(g(i, 1)) + '\n';
    }
  }
  return out;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, v] : values) j[name] = v;
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it->is_number()) r.values[it.key()] = it->get<double>();
  }
  return r;
}

void MetricsReport::check_ranges() const {
  const auto in = [&](const char* name, double lo, double hi) {
    const auto it = values.find(name);
    if (it != values.end() && !(it->second >= lo && it->second <= hi)) {
      throw Error(ErrorCode::InvalidArgument, std::string(name) + " out of range");
    }
  };
  const double inf = std::numeric_limits<double>::infinity();
  in("grad_cs", -1.0, 1.0);
  in("cond_score_cs", -1.0, 1.0);
  in("coverage", 0.0, 1.0);
  in("intra_coverage", 0.0, 1.0);
  in("ece", 0.0, 1.0);
  in("fd2", 0.0, inf);
  in("intra_fd2", 0.0, inf);
  in("grad_mse", 0.0, inf);
  in("density", 0.0, inf);
  in("intra_density", 0.0, inf);
}

}  // namespace selfcal
