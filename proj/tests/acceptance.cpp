// Acceptance checks. Each criterion prints one PASS/FAIL line; `--only N`
// runs a single criterion so ctest can time them separately.
#include "support.hpp"

#include "selfcal/diffmath/gradient.hpp"
#include "selfcal/experiment.hpp"
#include "selfcal/models/gmm.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace selfcal;
using selfcal::testing::fd_gradient;
using selfcal::testing::fd_param_gradient;
using selfcal::testing::random_matrix;
using selfcal::testing::randomize;
using selfcal::testing::rel_err;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records a named comparison; every check contributes to the detail line.
  void expect(bool ok, const std::string& what) {
    pass = pass && ok;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [failed]");
  }
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

NetConfig small_net(int hidden = 16) {
  NetConfig c;
  c.hidden = hidden;
  c.depth = 2;
  c.time_features = 4;
  return c;
}

Classifier random_classifier(int k, std::uint64_t seed, int hidden = 16) {
  Rng rng = make_rng(seed, Stream::Init);
  Classifier cls = make_classifier(NoiseSchedule{}, small_net(hidden), k, rng);
  randomize(cls.params, rng);
  return cls;
}

ScoreNet random_score_net(std::uint64_t seed, int hidden = 16) {
  Rng rng = make_rng(seed, Stream::Init);
  ScoreNet net = make_score_net(NoiseSchedule{}, small_net(hidden), rng);
  randomize(net.params, rng);
  return net;
}

Points uniform_in_grid(Eigen::Index n, Rng& rng) {
  std::uniform_real_distribution<double> ux(-12.0, 12.0);
  std::uniform_real_distribution<double> uy(-8.0, 8.0);
  Points x(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) << ux(rng), uy(rng);
  return x;
}

PerturbedBatch random_batch(Eigen::Index n, int k, std::uint64_t seed, bool labeled = true) {
  Rng data = make_rng(seed, Stream::Data);
  Rng time = make_rng(seed, Stream::Time);
  Rng noise = make_rng(seed, Stream::Noise);
  const Points x0 = random_matrix(n, 2, data, 3.0);
  Labels y(static_cast<std::size_t>(n), kUnlabeled);
  if (labeled) {
    std::uniform_int_distribution<int> pick(0, k - 1);
    for (auto& v : y) v = pick(data);
  }
  return make_perturbed_batch(NoiseSchedule{}, x0, y, time, noise);
}

double log_sum_exp(const Eigen::RowVectorXd& f) { return std::log((f.array() - f.maxCoeff()).exp().sum()) + f.maxCoeff(); }

// --- 1 ----------------------------------------------------------------------

Outcome algebraic_identities() {
  Outcome out;
  const Stopwatch clock;
  double worst = 0.0;
  for (std::uint64_t c = 0; c < 100; ++c) {
    const int k = 2 + static_cast<int>(c % 4);
    const Classifier cls = random_classifier(k, 1000 + c);
    Rng rng = make_rng(c, Stream::Data);
    std::uniform_real_distribution<double> ut(kTrainEps, 1.0);
    std::uniform_int_distribution<int> uy(0, k - 1);
    const Points x = uniform_in_grid(100, rng);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double t = ut(rng);
      const int y = uy(rng);
      const Points xi = x.row(i);
      const Points lhs = posterior_log_grad(cls, xi, y, t) + internal_score(cls, xi, t);
      worst = std::max(worst, (lhs - logit_grad(cls, xi, y, t)).cwiseAbs().maxCoeff());
    }
  }
  out.expect(worst < 1e-8, "classifier identity max-abs " + fmt(worst));

  const GmmSpec spec = default_toy_gmm();
  const NoiseSchedule s;
  const GridSpec grid;
  double oracle_worst = 0.0;
  for (const double t : {0.0, 0.1, 0.5, 1.0}) {
    const GradientField post = oracle_gradient_field(spec, s, grid, t);
    const GradientField cond = oracle_conditional_field(spec, s, grid, t);
    const Points unc = oracle_unconditional_field(spec, s, grid, t);
    for (std::size_t y = 0; y < post.per_class.size(); ++y) {
      oracle_worst = std::max(oracle_worst, (unc + post.per_class[y] - cond.per_class[y]).cwiseAbs().maxCoeff());
    }
  }
  out.expect(oracle_worst < 1e-8, "oracle identity on grid max-abs " + fmt(oracle_worst));
  out.expect(clock.seconds() < 60.0, "runtime " + fmt(clock.seconds(), 3) + " s");
  return out;
}

// --- 2 ----------------------------------------------------------------------

Outcome differentiation_oracles() {
  Outcome out;
  const Stopwatch clock;
  double input_worst = 0.0;
  double first_worst = 0.0;
  double second_worst = 0.0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const int k = 2 + static_cast<int>(i % 3);
    const Classifier cls = random_classifier(k, 2000 + i, 8);
    const ScoreNet score = random_score_net(3000 + i, 8);
    Rng rng = make_rng(i, Stream::Data);
    std::uniform_real_distribution<double> ut(0.05, 1.0);

    // Input gradients at one random point.
    const Eigen::MatrixXd x = random_matrix(2, 1, rng, 3.0);
    const double t = ut(rng);
    const int y = static_cast<int>(i % static_cast<std::uint64_t>(k));
    const auto logits = [&](const Eigen::MatrixXd& p) -> Eigen::RowVectorXd {
      return classifier_logits(cls, p.transpose(), t).row(0);
    };
    const Eigen::MatrixXd fd_logit = fd_gradient([&](const Eigen::MatrixXd& p) { return logits(p)(y); }, x);
    const Eigen::MatrixXd fd_lse = fd_gradient([&](const Eigen::MatrixXd& p) { return log_sum_exp(logits(p)); }, x);
    const Eigen::MatrixXd fd_post = fd_gradient(
        [&](const Eigen::MatrixXd& p) {
          const Eigen::RowVectorXd f = logits(p);
          return f(y) - log_sum_exp(f);
        },
        x);
    const Points xr = x.transpose();
    input_worst = std::max({input_worst, rel_err(logit_grad(cls, xr, y, t).transpose(), fd_logit),
                            rel_err(internal_score(cls, xr, t).transpose(), fd_lse),
                            rel_err(posterior_log_grad(cls, xr, y, t).transpose(), fd_post)});
    Eigen::Matrix2d fd_jac;
    for (int c = 0; c < 2; ++c) {
      fd_jac.row(c) = fd_gradient([&](const Eigen::MatrixXd& p) { return score_net_eval(score, Point(p(0), p(1)), t)(c); },
                                  x)
                          .transpose();
    }
    input_worst = std::max(input_worst, rel_err(score_net_jacobian(score, Point(x(0), x(1)), t), fd_jac));

    // First-order parameter gradients.
    const PerturbedBatch b = random_batch(4, k, 4000 + i);
    const auto check_first = [&](const diff::ParamSet& params, auto loss) {
      const diff::GradResult r = diff::param_gradient(loss, params);
      const diff::ParamSet fd =
          fd_param_gradient([&](const diff::ParamSet& p) { return diff::evaluate(loss, p); }, params);
      return rel_err(r.gradient, fd);
    };
    first_worst = std::max(
        {first_worst,
         check_first(cls.params, [&](diff::Tape&, std::span<const diff::Var> v) { return ce_loss(v, cls, b); }),
         check_first(cls.params, [&](diff::Tape&, std::span<const diff::Var> v) { return ls_ce_loss(v, cls, b, 0.1); }),
         check_first(score.params, [&](diff::Tape&, std::span<const diff::Var> v) { return dsm_loss(v, score, b); })});

    // Second-order: losses built from input gradients.
    second_worst = std::max(
        {second_worst,
         check_first(cls.params, [&](diff::Tape&, std::span<const diff::Var> v) { return sc_loss(v, cls, b); }),
         check_first(cls.params, [&](diff::Tape&, std::span<const diff::Var> v) { return dlsm_loss(v, cls, score, b); }),
         check_first(cls.params,
                     [&](diff::Tape&, std::span<const diff::Var> v) { return jacobian_reg_loss(v, cls, b); })});
  }
  out.expect(input_worst < 1e-4, "input gradients worst rel " + fmt(input_worst));
  out.expect(first_worst < 1e-4, "first-order parameter gradients worst rel " + fmt(first_worst));
  out.expect(second_worst < 1e-3, "second-order parameter gradients worst rel " + fmt(second_worst));
  out.expect(clock.seconds() < 120.0, "runtime " + fmt(clock.seconds(), 3) + " s");
  return out;
}

// --- 3 ----------------------------------------------------------------------

Outcome dsm_analytics() {
  Outcome out;
  const Stopwatch clock;
  const NoiseSchedule s;
  {
    Rng init = make_rng(1, Stream::Init);
    const ScoreNet zero = make_score_net(s, NetConfig{}, init);
    Rng data = make_rng(1, Stream::Data);
    const LabeledPoints x0 = sample_gmm(default_toy_gmm(), 100000, data);
    Rng time = make_rng(1, Stream::Time);
    Rng noise = make_rng(1, Stream::Noise);
    const PerturbedBatch b = make_perturbed_batch(s, x0.x, x0.labels, time, noise);
    const double v = dsm_loss(zero, b);
    out.expect(std::abs(v - 1.0) < 0.03, "zero-net DSM " + fmt(v, 5));
  }
  {
    TrainConfig cfg;
    cfg.steps = 3000;
    cfg.seed = 2;
    // Input scaling follows the data spread, which is zero here.
    cfg.net.data_scale = s.sigma_min;
    const TrainedScoreNet net = train_score(cfg, s, Points::Zero(512, 2));
    Rng rng = make_rng(3, Stream::Noise);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const double t = 0.05 * (i + 1);
      const double sig = s.sigma(t);
      const Point xt = sig * Point(random_matrix(2, 1, rng));
      const Point truth = -xt / (sig * sig);
      worst = std::max(worst, (score_net_eval(net.model, xt, t) - truth).norm() / truth.norm());
    }
    out.expect(worst < 0.1, "Dirac score net worst rel err " + fmt(worst) + " over 20 probes");
  }
  out.expect(clock.seconds() < 300.0, "runtime " + fmt(clock.seconds(), 3) + " s");
  return out;
}

// --- 4 ----------------------------------------------------------------------

// Minimum-cost perfect matching on a square cost matrix (shortest augmenting
// paths with potentials). Returns the total cost.
double assignment_cost(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += cost(p[j] - 1, j - 1);
  return total;
}

double wasserstein2(const Points& a, const Points& b) {
  Eigen::MatrixXd cost(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) cost.row(i) = (b.rowwise() - a.row(i)).rowwise().squaredNorm().transpose();
  return std::sqrt(assignment_cost(cost) / static_cast<double>(a.rows()));
}

GmmSpec compact_pair() {
  GmmSpec g;
  const Eigen::Matrix2d cov = 0.64 * Eigen::Matrix2d::Identity();
  g.classes = {{{Point(-1.5, 0.0), cov, 1.0}}, {{Point(1.5, 0.0), cov, 1.0}}};
  g.priors = {0.5, 0.5};
  return g;
}

Outcome sampler_statistics() {
  Outcome out;
  const Stopwatch clock;
  const NoiseSchedule s;
  const Eigen::Index n = 4096;
  {
    SamplerConfig cfg;
    cfg.seed = 5;
    const ScoreFn gauss = [&](const Points& x, double t) -> Points {
      const double sig = s.sigma(t);
      return -x / (1.0 + sig * sig);
    };
    const Points x = pc_sample(gauss, cfg, s, n);
    const Eigen::RowVector2d mu = x.colwise().mean();
    const Points c = x.rowwise() - mu;
    const Eigen::Matrix2d cov = c.transpose() * c / static_cast<double>(n - 1);
    const double cov_err = (cov - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff();
    out.expect(mu.cwiseAbs().maxCoeff() < 0.05, "N(0, I) mean max-abs " + fmt(mu.cwiseAbs().maxCoeff()));
    out.expect(cov_err < 0.05, "N(0, I) covariance max-abs error " + fmt(cov_err));
  }
  {
    const GmmSpec g = compact_pair();
    SamplerConfig cfg;
    cfg.seed = 6;
    const ScoreFn oracle = [&](const Points& x, double t) {
      const double sig = s.sigma(t);
      return gmm_score(g, x, sig * sig);
    };
    const Points x = pc_sample(oracle, cfg, s, n);
    Rng rng = make_rng(6, Stream::Data);
    const Points fresh = sample_gmm(g, n, rng).x;
    const double w2 = wasserstein2(x, fresh);
    out.expect(w2 < 0.25, "GMM-oracle W2 " + fmt(w2));
  }
  out.expect(clock.seconds() < 300.0, "runtime " + fmt(clock.seconds(), 3) + " s");
  return out;
}

// --- 5 and 7 ----------------------------------------------------------------

// Shared toy-study classifier settings for the vanilla and self-calibrated runs.
TrainConfig toy_classifier_config(std::uint64_t seed) {
  TrainConfig tc;
  tc.steps = 4000;
  tc.seed = seed;
  tc.adam.learning_rate = 1e-3;
  tc.net.data_scale = 1.0;
  tc.net.max_frequency = 0.3;
  return tc;
}

struct ToyStudyRow {
  double mse = 0.0;
  double cs = 0.0;
  double cond_cs = 0.0;
  double ece = 0.0;
};

struct ToyStudy {
  std::vector<ToyStudyRow> vanilla;
  std::vector<ToyStudyRow> sc;
};

ToyStudy toy_study() {
  ToyStudy study;
  const NoiseSchedule s;
  const GridSpec grid;
  const GmmSpec gmm = default_toy_gmm();
  const GradientField truth = oracle_gradient_field(gmm, s, grid, 0.0);
  const GradientField cond = oracle_conditional_field(gmm, s, grid, 0.0);
  const Points unc = oracle_unconditional_field(gmm, s, grid, 0.0);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ToyDatasetSpec ds;
    ds.seed = seed;
    const ToySplits data = make_toy_dataset(ds);
    for (const double lambda_sc : {0.0, 1.0}) {
      LossWeights w;
      w.lambda_sc = lambda_sc;
      const TrainedClassifier tr = train_classifier(toy_classifier_config(seed), s, 2, data.labeled, data.unlabeled, w);
      const GradientField f = classifier_gradient_field(tr.model, grid, 0.0);
      const FieldMetrics m = grad_field_metrics(f, truth);
      ToyStudyRow row{m.mse, m.cs, cond_score_cs(f, unc, cond).mean,
                      classifier_ece(tr.model, data.test.x, data.test.labels, 0.0)};
      std::printf("  seed %llu lambda_sc %g: mse %.4f cs %.4f cond_cs %.4f ece %.5f\n",
                  static_cast<unsigned long long>(seed), lambda_sc, row.mse, row.cs, row.cond_cs, row.ece);
      std::fflush(stdout);
      (lambda_sc == 0.0 ? study.vanilla : study.sc).push_back(row);
    }
  }
  return study;
}

template <typename F>
double median_of(const std::vector<ToyStudyRow>& rows, F&& field) {
  std::vector<double> v;
  for (const ToyStudyRow& r : rows) v.push_back(field(r));
  return median(v);
}

Outcome toy_gradient_trend() {
  Outcome out;
  const Stopwatch clock;
  const ToyStudy st = toy_study();
  const auto mse = [](const ToyStudyRow& r) { return r.mse; };
  const auto cs = [](const ToyStudyRow& r) { return r.cs; };
  const auto ccs = [](const ToyStudyRow& r) { return r.cond_cs; };
  const double mv = median_of(st.vanilla, mse), ms = median_of(st.sc, mse);
  const double cv = median_of(st.vanilla, cs), cs_sc = median_of(st.sc, cs);
  const double qv = median_of(st.vanilla, ccs), qs = median_of(st.sc, ccs);
  out.expect(ms <= 0.9 * mv, "median mse sc " + fmt(ms) + " vs 0.9 x vanilla " + fmt(0.9 * mv));
  out.expect(cs_sc > cv, "median cs sc " + fmt(cs_sc) + " vs vanilla " + fmt(cv));
  out.expect(qv > 0.85 && qs > 0.85, "median cond-score cs vanilla " + fmt(qv) + ", sc " + fmt(qs));
  out.expect(clock.seconds() < 1800.0, "runtime " + fmt(clock.seconds(), 3) + " s");
  return out;
}

Outcome calibration_trend() {
  Outcome out;
  const ToyStudy st = toy_study();
  const auto e = [](const ToyStudyRow& r) { return r.ece; };
  const double ev = median_of(st.vanilla, e), es = median_of(st.sc, e);
  out.expect(es <= ev, "median ECE sc " + fmt(es) + " vs vanilla " + fmt(ev));
  return out;
}

// --- 6 ----------------------------------------------------------------------

nlohmann::json semi_supervised_config(const std::string& preset, std::uint64_t seed) {
  return {{"preset", preset},
          {"seed", seed},
          {"dataset", {{"n_train", 2000}, {"n_test", 1000}, {"labeled_fraction", 0.05}}},
          {"score_net", {{"steps", 4000}}},
          {"classifier",
           {{"steps", 4000}, {"learning_rate", 1e-3}, {"net", {{"data_scale", 1.0}, {"max_frequency", 0.3}}}}},
          {"eval", {{"samples_per_class", 500}}}};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "selfcal_acceptance" / name;
  fs::remove_all(p);
  return p;
}

Outcome semi_supervised_trend() {
  Outcome out;
  const Stopwatch clock;
  std::map<std::string, std::vector<double>> fd2;
  const std::vector<std::string> presets = {"cg", "cg-sc-labeled", "cg-sc-all"};
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::optional<ScoreNet> score;
    for (const std::string& preset : presets) {
      const nlohmann::json j = semi_supervised_config(preset, seed);
      const ExperimentConfig cfg = parse_experiment_config(j);
      if (!score) score = train_score_stage(cfg, generate_data(cfg));
      const MetricsReport r =
          run_experiment(cfg, j.dump(), RunPaths{scratch(preset + "_" + std::to_string(seed))}, {}, &*score);
      const double v = r.values.at("intra_fd2");
      std::printf("  seed %llu %s: intra_fd2 %.4f\n", static_cast<unsigned long long>(seed), preset.c_str(), v);
      std::fflush(stdout);
      fd2[preset].push_back(v);
    }
  }
  const double all = median(fd2["cg-sc-all"]), lab = median(fd2["cg-sc-labeled"]), cg = median(fd2["cg"]);
  out.expect(all <= lab, "median intra_fd2 cg-sc-all " + fmt(all) + " vs cg-sc-labeled " + fmt(lab));
  out.expect(lab <= cg, "median intra_fd2 cg-sc-labeled " + fmt(lab) + " vs cg " + fmt(cg));
  out.expect(clock.seconds() < 2700.0, "runtime " + fmt(clock.seconds(), 3) + " s");
  return out;
}

// --- 8 ----------------------------------------------------------------------

template <typename F>
double median_step_ms(const Classifier& cls, F&& loss) {
  Adam adam(AdamConfig{}, cls.params.num_scalars());
  diff::ParamSet params = cls.params;
  std::vector<double> ms;
  for (int rep = 0; rep < 17; ++rep) {
    const auto start = std::chrono::steady_clock::now();
    const diff::GradResult r = diff::param_gradient(loss, params);
    adam.step(params, r.gradient);
    const double dt = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (rep >= 2) ms.push_back(dt);
  }
  return median(ms);
}

Outcome cost_ordering() {
  Outcome out;
  Rng init = make_rng(8, Stream::Init);
  const Classifier cls = make_classifier(NoiseSchedule{}, NetConfig{}, 2, init);
  Rng data = make_rng(8, Stream::Data);
  const LabeledPoints x0 = sample_gmm(default_toy_gmm(), 128, data);
  Rng time = make_rng(8, Stream::Time);
  Rng noise = make_rng(8, Stream::Noise);
  const PerturbedBatch b = make_perturbed_batch(NoiseSchedule{}, x0.x, x0.labels, time, noise);
  SgldConfig sgld;
  sgld.steps = 5;
  Rng sgld_rng = make_rng(8, Stream::Sgld);
  const double sc = median_step_ms(cls, [&](diff::Tape&, std::span<const diff::Var> v) { return sc_loss(v, cls, b); });
  const double jem = median_step_ms(
      cls, [&](diff::Tape&, std::span<const diff::Var> v) { return jem_loss(v, cls, b, sgld, sgld_rng); });
  out.expect(sc < jem, "median step sc " + fmt(sc, 3) + " ms vs jem(5 sgld) " + fmt(jem, 3) + " ms");
  return out;
}

// --- 9 ----------------------------------------------------------------------

GmmSpec symmetric_pair() {
  GmmSpec s;
  s.classes = {{{Point(-2.0, 0.0), 0.5 * Eigen::Matrix2d::Identity(), 1.0}},
               {{Point(2.0, 0.0), 0.5 * Eigen::Matrix2d::Identity(), 1.0}}};
  s.priors = {0.5, 0.5};
  return s;
}

Outcome metric_units() {
  Outcome out;
  const Stopwatch clock;
  const NoiseSchedule s;
  const GridSpec grid;
  const GmmSpec toy = default_toy_gmm();

  out.expect(grid.node_count() == 49 * 33 && grid.nodes().rows() == 49 * 33, "default grid 49 x 33 nodes");

  const GradientField truth = oracle_gradient_field(toy, s, grid, 0.0);
  const FieldMetrics same = grad_field_metrics(truth, truth);
  out.expect(same.mse == 0.0 && std::abs(same.cs - 1.0) < 1e-12, "identity fields (" + fmt(same.mse) + ", " +
                                                                     fmt(same.cs, 12) + ")");
  const GradientField smooth = oracle_gradient_field(toy, s, grid, 0.6);
  GradientField rot = smooth;
  for (Points& p : rot.per_class) {
    const Eigen::VectorXd gx = p.col(0);
    p.col(0) = -p.col(1);
    p.col(1) = gx;
  }
  const double orth = grad_field_metrics(rot, smooth).cs;
  out.expect(std::abs(orth) < 1e-12, "orthogonal fields cs " + fmt(orth));

  const GradientField cond = oracle_conditional_field(toy, s, grid, 0.0);
  const Points unc = oracle_unconditional_field(toy, s, grid, 0.0);
  const double exact = cond_score_cs(truth, unc, cond).mean;
  out.expect(std::abs(exact - 1.0) < 1e-9, "oracle classifier cond-score cs " + fmt(exact, 12));
  // Zero classifier gradients: brute-force cosine of unconditional vs conditional.
  GradientField zero = truth;
  for (Points& p : zero.per_class) p.setZero();
  double sum = 0.0;
  int counted = 0;
  for (const Points& c : cond.per_class) {
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
      const double na = unc.row(i).norm(), nb = c.row(i).norm();
      if (na < 1e-12 || nb < 1e-12) continue;
      sum += unc.row(i).dot(c.row(i)) / (na * nb);
      ++counted;
    }
  }
  const double zero_cs = cond_score_cs(zero, unc, cond).mean;
  out.expect(std::abs(zero_cs - sum / counted) < 1e-12, "zero-gradient cond-score cs " + fmt(zero_cs));

  Rng rng = make_rng(9, Stream::Data);
  const Points a = random_matrix(500, 2, rng);
  const Points b = random_matrix(300, 2, rng, 2.0);
  Points shifted = a;
  shifted.col(0).array() += 1.0;
  out.expect(frechet_2d(a, a) < 1e-12, "Frechet identical sets " + fmt(frechet_2d(a, a)));
  const double off = frechet_2d(a, shifted);
  out.expect(std::abs(off - 1.0) < 1e-10, "Frechet offset (1, 0) " + fmt(off, 12));
  out.expect(std::abs(frechet_2d(a, b) - frechet_2d(b, a)) < 1e-10, "Frechet symmetric");

  const Points real = random_matrix(200, 2, rng);
  out.expect(density_coverage(real, real, 5).coverage == 1.0, "copy-set coverage 1");
  const DensityCoverage far = density_coverage(real, (real.array() + 100.0).matrix(), 5);
  out.expect(far.density == 0.0 && far.coverage == 0.0, "distant set (0, 0)");
  {
    Points r(3, 2);
    r << 0, 0, 1, 0, 3, 0;
    Points g(2, 2);
    g << 0.5, 0, 6, 0;
    double inside = 0;
    std::vector<bool> covered(3, false);
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 3; ++j) {
        double rad = std::numeric_limits<double>::infinity();
        for (int m = 0; m < 3; ++m) {
          if (m != j) rad = std::min(rad, (r.row(j) - r.row(m)).norm());
        }
        if ((g.row(i) - r.row(j)).norm() <= rad) {
          ++inside;
          covered[static_cast<std::size_t>(j)] = true;
        }
      }
    }
    const DensityCoverage dc = density_coverage(r, g, 1);
    const double cov = static_cast<double>(std::count(covered.begin(), covered.end(), true)) / 3.0;
    out.expect(std::abs(dc.density - inside / 2.0) < 1e-12 && std::abs(dc.coverage - cov) < 1e-12,
               "3-point hand case (" + fmt(dc.density) + ", " + fmt(dc.coverage) + ")");
  }

  const std::vector<Points> rc = {random_matrix(80, 2, rng), random_matrix(90, 2, rng, 2.0)};
  const std::vector<Points> gc = {random_matrix(70, 2, rng, 1.5), random_matrix(60, 2, rng)};
  out.expect(intra_density_coverage(rc, rc, 5).coverage == 1.0, "identical per-class sets intra-coverage 1");
  out.expect(intra_mean({0.2, 0.6}) == 0.5 * (0.2 + 0.6), "intra mean (a + b) / 2");
  const DensityCoverage d0 = density_coverage(rc[0], gc[0], 5), d1 = density_coverage(rc[1], gc[1], 5);
  const DensityCoverage di = intra_density_coverage(rc, gc, 5);
  const double fd_brute = 0.5 * (frechet_2d(rc[0], gc[0]) + frechet_2d(rc[1], gc[1]));
  out.expect(std::abs(intra_fd2(rc, gc) - fd_brute) < 1e-12 &&
                 std::abs(di.density - 0.5 * (d0.density + d1.density)) < 1e-12 &&
                 std::abs(di.coverage - 0.5 * (d0.coverage + d1.coverage)) < 1e-12,
             "intra metrics match per-class recomputation");

  out.expect(ece(Eigen::VectorXd::Ones(8), std::vector<bool>(8, true)) == 0.0, "ECE confident and correct 0");
  std::vector<bool> six(10, false);
  std::fill(six.begin(), six.begin() + 6, true);
  const double hand = ece(Eigen::VectorXd::Constant(10, 0.75), six);
  out.expect(std::abs(hand - 0.15) < 1e-12, "ECE hand case " + fmt(hand, 12));
  out.expect(kEceBuckets == 20, "ECE default 20 buckets");

  {
    const GradientField f = oracle_gradient_field(symmetric_pair(), s, grid, 0.0);
    const int nx = grid.nx();
    double worst = 0.0;
    for (int j = 0; j < grid.ny(); ++j) {
      for (int i = 0; i < nx; ++i) {
        const Eigen::Index p = j * nx + i, q = j * nx + (nx - 1 - i);
        worst = std::max({worst, std::abs(f.per_class[0](p, 0) + f.per_class[1](q, 0)),
                          std::abs(f.per_class[0](p, 1) - f.per_class[1](q, 1))});
      }
    }
    out.expect(worst < 1e-9, "oracle field mirror symmetry max-abs " + fmt(worst));
  }
  {
    const Classifier cls = random_classifier(2, 9);
    GridSpec coarse;
    coarse.step = 2.0;
    const GradientField f = classifier_gradient_field(cls, coarse, 0.0);
    const Points nodes = coarse.nodes();
    double worst = 0.0;
    for (Eigen::Index i = 0; i < nodes.rows(); ++i) {
      for (int y = 0; y < 2; ++y) {
        const Points direct = posterior_log_grad(cls, Points(nodes.row(i)), y, 0.0);
        worst = std::max(worst, (f.per_class[static_cast<std::size_t>(y)].row(i) - direct.row(0)).norm());
      }
    }
    out.expect(worst < 1e-12, "classifier field vs pointwise calls max " + fmt(worst));
  }
  out.expect(clock.seconds() < 60.0, "runtime " + fmt(clock.seconds(), 3) + " s");
  return out;
}

// --- 10 ---------------------------------------------------------------------

Outcome determinism() {
  Outcome out;
  for (const std::string preset : {"cg-sc-all", "cfg-all"}) {
    const nlohmann::json net = {{"hidden", 32}, {"depth", 2}, {"time_features", 8}};
    const nlohmann::json j = {{"preset", preset},
                              {"seed", 17},
                              {"dataset", {{"n_train", 400}, {"n_test", 200}, {"labeled_fraction", 0.2}}},
                              {"score_net", {{"steps", 200}, {"batch_size", 64}, {"net", net}}},
                              {"classifier", {{"steps", 200}, {"batch_size", 64}, {"net", net}}},
                              {"cond_net", {{"steps", 200}, {"batch_size", 64}, {"net", net}}},
                              {"sampler", {{"n_steps", 200}}},
                              {"eval", {{"samples_per_class", 100}}}};
    const ExperimentConfig cfg = parse_experiment_config(j);
    const RunPaths a{scratch(preset + "_a")};
    const RunPaths b{scratch(preset + "_b")};
    (void)run_experiment(cfg, j.dump(), a);
    (void)run_experiment(cfg, j.dump(), b);
    const bool samples = read_text_file(a.samples()) == read_text_file(b.samples());
    const bool metrics = read_text_file(a.metrics()) == read_text_file(b.metrics());
    out.expect(samples && metrics, preset + " samples.csv " + (samples ? "identical" : "differ") + ", metrics.json " +
                                       (metrics ? "identical" : "differ"));
  }
  return out;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selfcal acceptance checks"};
  int only = 0;
  app.add_option("--only", only, "run a single criterion (1-10)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "algebraic identities", algebraic_identities},
      {2, "differentiation oracles", differentiation_oracles},
      {3, "DSM analytics", dsm_analytics},
      {4, "sampler statistics", sampler_statistics},
      {5, "toy gradient trend", toy_gradient_trend},
      {6, "semi-supervised trend", semi_supervised_trend},
      {7, "calibration trend", calibration_trend},
      {8, "cost ordering", cost_ordering},
      {9, "metric units", metric_units},
      {10, "determinism", determinism},
  };
  bool all = true;
  for (const Criterion& c : criteria) {
    if (only != 0 && c.id != only) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.expect(false, std::string("threw: ") + e.what());
    }
    std::printf("criterion %d (%s): %s: %s\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail.str().c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
