#include "selfcal/training.hpp"

#include "selfcal/diffmath/gradient.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace selfcal {

using diff::Tape;
using diff::Var;

Adam::Adam(const AdamConfig& config, Eigen::Index n_params)
    : config_(config), m_(Eigen::VectorXd::Zero(n_params)), v_(Eigen::VectorXd::Zero(n_params)) {}

void Adam::step(diff::ParamSet& params, const diff::ParamSet& grad) {
  const Eigen::VectorXd g = grad.flatten();
  if (g.size() != m_.size()) throw Error(ErrorCode::InvalidArgument, "Adam: gradient size mismatch");
  ++t_;
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * g;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(config_.beta1, t_);
  const double c2 = 1.0 - std::pow(config_.beta2, t_);
  const Eigen::ArrayXd update =
      config_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.eps);
  params.assign_flat(params.flatten() - update.matrix());
}

void TrainConfig::validate() const {
  if (batch_size < 2 || batch_size % 2 != 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be even and >= 2");
  if (steps < 1) throw Error(ErrorCode::InvalidArgument, "steps must be >= 1");
  if (!(adam.learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning_rate must be positive");
  if (eval_every < 0) throw Error(ErrorCode::InvalidArgument, "eval_every must be >= 0");
  net.validate();
}

std::string RunLog::to_jsonl() const {
  std::string out;
  for (const StepRecord& r : records) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    for (const auto& [name, value] : r.losses) j[name] = value;
    j["wall_ms"] = r.wall_ms;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<double> RunLog::series(const std::string& term) const {
  std::vector<double> out;
  for (const StepRecord& r : records) {
    const auto it = r.losses.find(term);
    if (it != r.losses.end()) out.push_back(it->second);
  }
  return out;
}

namespace {

void draw_rows(const Dataset& pool, int count, Rng& rng, Points& x, Labels& y, Eigen::Index offset) {
  const auto n = static_cast<int>(pool.size());
  if (n >= count) {
    // Partial Fisher-Yates: a uniform subset without replacement.
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < count; ++i) {
      std::uniform_int_distribution<int> pick(i, n - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
      const int r = idx[static_cast<std::size_t>(i)];
      x.row(offset + i) = pool.x.row(r);
      y[static_cast<std::size_t>(offset + i)] = pool.labels[static_cast<std::size_t>(r)];
    }
  } else {
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int i = 0; i < count; ++i) {
      const int r = pick(rng);
      x.row(offset + i) = pool.x.row(r);
      y[static_cast<std::size_t>(offset + i)] = pool.labels[static_cast<std::size_t>(r)];
    }
  }
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

template <typename StepFn>
diff::ParamSet optimize(const TrainConfig& config, diff::ParamSet params, RunLog& log, const ProgressFn& progress,
                        StepFn&& step_fn) {
  Adam adam(config.adam, params.num_scalars());
  log.records.reserve(static_cast<std::size_t>(config.steps));
  for (int step = 0; step < config.steps; ++step) {
    const auto start = std::chrono::steady_clock::now();
    StepRecord record;
    record.step = step;
    diff::GradResult result;
    try {
      result = step_fn(params, record);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NumericalOverflow && e.code() != ErrorCode::SgldDiverged) throw;
      throw TrainingDivergedError("step " + std::to_string(step) + ": " + e.what(), log, params);
    }
    if (!std::isfinite(result.value) || !result.gradient.all_finite()) {
      throw TrainingDivergedError("non-finite loss at step " + std::to_string(step), log, params);
    }
    record.losses["loss"] = result.value;
    diff::ParamSet next = params;
    adam.step(next, result.gradient);
    if (!next.all_finite()) {
      log.records.push_back(record);
      throw TrainingDivergedError("non-finite parameters after step " + std::to_string(step), log, params);
    }
    params = std::move(next);
    record.wall_ms = elapsed_ms(start);
    log.records.push_back(record);
    if (progress && config.eval_every > 0 && (step + 1) % config.eval_every == 0) progress(record);
  }
  return params;
}

}  // namespace

ComposedBatch compose_batch(const Dataset& labeled, const Dataset& unlabeled, int batch_size, Rng& rng) {
  if (labeled.empty()) throw Error(ErrorCode::NoLabeledData, "labeled pool is empty");
  if (batch_size < 2 || batch_size % 2 != 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be even");
  const int half = batch_size / 2;
  ComposedBatch b;
  b.all_x.resize(batch_size, 2);
  b.all_y.assign(static_cast<std::size_t>(batch_size), kUnlabeled);
  draw_rows(labeled, half, rng, b.all_x, b.all_y, 0);
  draw_rows(unlabeled.empty() ? labeled : unlabeled, half, rng, b.all_x, b.all_y, half);
  b.labeled_x = b.all_x.topRows(half);
  b.labeled_y.assign(b.all_y.begin(), b.all_y.begin() + half);
  return b;
}

TrainedClassifier train_classifier(const TrainConfig& config, const NoiseSchedule& schedule, int num_classes,
                                   const Dataset& labeled, const Dataset& unlabeled, const LossWeights& weights,
                                   const ClassifierLossContext& context, const ProgressFn& progress) {
  config.validate();
  weights.validate();
  if (labeled.empty()) throw Error(ErrorCode::NoLabeledData, "labeled pool is empty");
  if (!labeled.fully_labeled()) throw Error(ErrorCode::InvalidArgument, "labeled pool contains unlabeled rows");
  Rng init_rng = make_rng(config.seed, Stream::Init);
  Rng batch_rng = make_rng(config.seed, Stream::Batch);
  Rng time_rng = make_rng(config.seed, Stream::Time);
  Rng noise_rng = make_rng(config.seed, Stream::Noise);
  Rng sgld_rng = make_rng(config.seed, Stream::Sgld);

  TrainedClassifier out{make_classifier(schedule, config.net, num_classes, init_rng), {}};
  ClassifierLossContext ctx = context;
  ctx.sgld_rng = &sgld_rng;
  const int half = config.batch_size / 2;

  out.model.params = optimize(config, out.model.params, out.log, progress,
                              [&](const diff::ParamSet& params, StepRecord& record) {
    const ComposedBatch composed = compose_batch(labeled, unlabeled, config.batch_size, batch_rng);
    const PerturbedBatch all = make_perturbed_batch(schedule, composed.all_x, composed.all_y, time_rng, noise_rng);
    const PerturbedBatch lab = head(all, half);
    Classifier view{out.model.schedule, out.model.config, num_classes, {}};
    return diff::param_gradient(
        [&](Tape&, std::span<const Var> vars) {
          const ClassifierLossTerms terms = total_classifier_loss(vars, view, lab, all, weights, ctx);
          for (const auto& [name, v] : terms.components) record.losses[name] = v.scalar();
          return terms.total;
        },
        params);
  });
  return out;
}

TrainedScoreNet train_score(const TrainConfig& config, const NoiseSchedule& schedule, const Points& data,
                            const ProgressFn& progress) {
  config.validate();
  if (data.rows() == 0) throw Error(ErrorCode::EmptyBatch, "no training data");
  Rng init_rng = make_rng(config.seed, Stream::Init);
  Rng batch_rng = make_rng(config.seed, Stream::Batch);
  Rng time_rng = make_rng(config.seed, Stream::Time);
  Rng noise_rng = make_rng(config.seed, Stream::Noise);

  TrainedScoreNet out{make_score_net(schedule, config.net, init_rng), {}};
  const Labels unlabeled(static_cast<std::size_t>(config.batch_size), kUnlabeled);
  std::uniform_int_distribution<Eigen::Index> pick(0, data.rows() - 1);

  out.model.params = optimize(config, out.model.params, out.log, progress,
                              [&](const diff::ParamSet& params, StepRecord& record) {
    Points x0(config.batch_size, 2);
    for (int i = 0; i < config.batch_size; ++i) x0.row(i) = data.row(pick(batch_rng));
    const PerturbedBatch batch = make_perturbed_batch(schedule, x0, unlabeled, time_rng, noise_rng);
    ScoreNet view{out.model.schedule, out.model.config, {}};
    auto result = diff::param_gradient(
        [&](Tape&, std::span<const Var> vars) { return dsm_loss(vars, view, batch); }, params);
    record.losses["dsm"] = result.value;
    return result;
  });
  return out;
}

const char* to_string(CondMode mode) {
  switch (mode) {
    case CondMode::Cond: return "cond";
    case CondMode::CfgLabeled: return "cfg-labeled";
    case CondMode::CfgAll: return "cfg-all";
  }
  return "?";
}

CondMode cond_mode_from_string(const std::string& name) {
  if (name == "cond") return CondMode::Cond;
  if (name == "cfg-labeled") return CondMode::CfgLabeled;
  if (name == "cfg-all") return CondMode::CfgAll;
  throw Error(ErrorCode::InvalidArgument, "unknown conditional mode '" + name + "'");
}

TrainedCondScoreNet train_cond_score(const TrainConfig& config, const NoiseSchedule& schedule, int num_classes,
                                     const Dataset& labeled, const Dataset& unlabeled, CondMode mode,
                                     double null_prob, const ProgressFn& progress) {
  config.validate();
  if (labeled.empty()) throw Error(ErrorCode::NoLabeledData, "labeled pool is empty");
  if (!(null_prob >= 0.0 && null_prob <= 1.0)) throw Error(ErrorCode::InvalidArgument, "null_prob must lie in [0, 1]");
  Rng init_rng = make_rng(config.seed, Stream::Init);
  Rng batch_rng = make_rng(config.seed, Stream::Batch);
  Rng time_rng = make_rng(config.seed, Stream::Time);
  Rng noise_rng = make_rng(config.seed, Stream::Noise);
  Rng drop_rng = make_rng(config.seed, Stream::Dropout);

  TrainedCondScoreNet out{make_cond_score_net(schedule, config.net, num_classes, init_rng), {}};
  const Dataset no_unlabeled;
  const Dataset& second_pool = mode == CondMode::CfgAll ? unlabeled : no_unlabeled;
  std::bernoulli_distribution drop(null_prob);

  out.model.params = optimize(config, out.model.params, out.log, progress,
                              [&](const diff::ParamSet& params, StepRecord& record) {
    ComposedBatch composed = compose_batch(labeled, second_pool, config.batch_size, batch_rng);
    if (mode != CondMode::Cond) {
      for (int& y : composed.all_y) {
        if (y != kUnlabeled && drop(drop_rng)) y = kUnlabeled;
      }
    }
    const PerturbedBatch batch = make_perturbed_batch(schedule, composed.all_x, composed.all_y, time_rng, noise_rng);
    CondScoreNet view{out.model.schedule, out.model.config, num_classes, {}};
    auto result = diff::param_gradient(
        [&](Tape&, std::span<const Var> vars) { return cond_dsm_loss(vars, view, batch); }, params);
    record.losses["dsm"] = result.value;
    return result;
  });
  return out;
}

}  // namespace selfcal
