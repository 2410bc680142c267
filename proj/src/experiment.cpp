#include "selfcal/experiment.hpp"

#include "selfcal/models/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace selfcal {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::Config, where + ": " + what);
}

// Reads known keys from a JSON object and rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) config_error(where_, "expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  void read(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) config_error(at(key), "expected a number");
      out = v->get<double>();
    }
  }
  void read(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) config_error(at(key), "expected an integer");
      out = v->get<int>();
    }
  }
  void read(const char* key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
        config_error(at(key), "expected a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void read(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) config_error(at(key), "expected a boolean");
      out = v->get<bool>();
    }
  }
  void read(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) config_error(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  const json* child(const char* key) { return take(key); }

  std::string at(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (seen_.count(it.key()) == 0) config_error(at(it.key()), "unknown key");
    }
  }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

// Wraps library validation errors as config errors.
template <typename F>
void validated(const std::string& where, F&& check) {
  try {
    check();
  } catch (const Error& e) {
    config_error(where, e.what());
  }
}

void read_net(const json& j, const std::string& where, NetConfig& net) {
  ObjectReader r(j, where);
  r.read("hidden", net.hidden);
  r.read("depth", net.depth);
  r.read("time_features", net.time_features);
  r.read("max_frequency", net.max_frequency);
  r.read("data_scale", net.data_scale);
  r.read("zero_init_output", net.zero_init_output);
  std::string act = to_string(net.activation);
  r.read("activation", act);
  validated(r.at("activation"), [&] { net.activation = activation_from_string(act); });
  r.finish();
}

json net_to_json(const NetConfig& net) {
  return {{"hidden", net.hidden},
          {"depth", net.depth},
          {"time_features", net.time_features},
          {"max_frequency", net.max_frequency},
          {"data_scale", net.data_scale},
          {"zero_init_output", net.zero_init_output},
          {"activation", to_string(net.activation)}};
}

void read_train(const json& j, const std::string& where, TrainConfig& tc, double* null_prob = nullptr) {
  ObjectReader r(j, where);
  r.read("batch_size", tc.batch_size);
  r.read("steps", tc.steps);
  r.read("learning_rate", tc.adam.learning_rate);
  r.read("beta1", tc.adam.beta1);
  r.read("beta2", tc.adam.beta2);
  r.read("eps", tc.adam.eps);
  r.read("eval_every", tc.eval_every);
  std::string optimizer = "adam";
  r.read("optimizer", optimizer);
  if (optimizer != "adam") config_error(r.at("optimizer"), "only \"adam\" is supported");
  if (null_prob != nullptr) r.read("null_prob", *null_prob);
  if (const json* net = r.child("net")) read_net(*net, r.at("net"), tc.net);
  r.finish();
  validated(where, [&] { tc.validate(); });
}

json train_to_json(const TrainConfig& tc) {
  return {{"batch_size", tc.batch_size},
          {"steps", tc.steps},
          {"optimizer", "adam"},
          {"learning_rate", tc.adam.learning_rate},
          {"beta1", tc.adam.beta1},
          {"beta2", tc.adam.beta2},
          {"eps", tc.adam.eps},
          {"eval_every", tc.eval_every},
          {"net", net_to_json(tc.net)}};
}

Eigen::Vector2d read_vec2(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    config_error(where, "expected [x, y]");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

GmmSpec read_gmm(const json& j, const std::string& where) {
  ObjectReader r(j, where);
  GmmSpec spec;
  const json* classes = r.child("classes");
  if (classes == nullptr || !classes->is_array()) config_error(r.at("classes"), "expected an array of classes");
  for (std::size_t c = 0; c < classes->size(); ++c) {
    const json& comps = (*classes)[c];
    const std::string cw = r.at("classes") + "[" + std::to_string(c) + "]";
    if (!comps.is_array()) config_error(cw, "expected an array of components");
    std::vector<GmmComponent> out;
    for (std::size_t k = 0; k < comps.size(); ++k) {
      const std::string kw = cw + "[" + std::to_string(k) + "]";
      ObjectReader cr(comps[k], kw);
      GmmComponent comp;
      if (const json* m = cr.child("mean")) comp.mean = read_vec2(*m, cr.at("mean"));
      else config_error(cr.at("mean"), "missing");
      if (const json* cov = cr.child("cov")) {
        if (cov->is_number()) {
          comp.cov = cov->get<double>() * Eigen::Matrix2d::Identity();
        } else if (cov->is_array() && cov->size() == 2) {
          comp.cov.row(0) = read_vec2((*cov)[0], cr.at("cov")).transpose();
          comp.cov.row(1) = read_vec2((*cov)[1], cr.at("cov")).transpose();
        } else {
          config_error(cr.at("cov"), "expected a variance or a 2x2 matrix");
        }
      }
      cr.read("weight", comp.weight);
      cr.finish();
      out.push_back(comp);
    }
    spec.classes.push_back(std::move(out));
  }
  if (const json* priors = r.child("priors")) {
    if (!priors->is_array()) config_error(r.at("priors"), "expected an array");
    for (const json& p : *priors) {
      if (!p.is_number()) config_error(r.at("priors"), "expected numbers");
      spec.priors.push_back(p.get<double>());
    }
  } else {
    spec.priors.assign(spec.classes.size(), 1.0 / static_cast<double>(std::max<std::size_t>(1, spec.classes.size())));
  }
  r.finish();
  return spec;
}

json gmm_to_json(const GmmSpec& spec) {
  json classes = json::array();
  for (const auto& comps : spec.classes) {
    json arr = json::array();
    for (const GmmComponent& c : comps) {
      arr.push_back({{"mean", {c.mean.x(), c.mean.y()}},
                     {"cov", {{c.cov(0, 0), c.cov(0, 1)}, {c.cov(1, 0), c.cov(1, 1)}}},
                     {"weight", c.weight}});
    }
    classes.push_back(arr);
  }
  return {{"classes", classes}, {"priors", spec.priors}};
}

// The loss weight a preset switches on, with its default value.
struct OwnedWeight {
  const char* key = nullptr;
  double default_value = 0.0;
};

OwnedWeight owned_weight(Preset p) {
  switch (p) {
    case Preset::CgScLabeled:
    case Preset::CgScAll: return {"lambda_sc", 1.0};
    case Preset::CgDlsm: return {"lambda_dlsm", 1.0};
    case Preset::CgJem: return {"lambda_jem", 1.0};
    case Preset::CgLs: return {"label_smoothing_eps", 0.1};
    case Preset::CgJr: return {"lambda_jr", 0.01};
    default: return {};
  }
}

double* weight_slot(LossWeights& w, const std::string& key) {
  if (key == "lambda_sc") return &w.lambda_sc;
  if (key == "lambda_dlsm") return &w.lambda_dlsm;
  if (key == "lambda_jr") return &w.lambda_jr;
  if (key == "label_smoothing_eps") return &w.label_smoothing_eps;
  if (key == "lambda_jem") return &w.lambda_jem;
  return nullptr;
}

const char* const kWeightKeys[] = {"lambda_sc", "lambda_dlsm", "lambda_jr", "label_smoothing_eps", "lambda_jem"};

void read_losses(const json* j, Preset preset, LossWeights& w, SgldConfig& sgld) {
  const std::string where = "losses";
  std::set<std::string> given;
  if (j != nullptr) {
    ObjectReader r(*j, where);
    for (const char* key : kWeightKeys) {
      if (r.has(key)) given.insert(key);
      r.read(key, *weight_slot(w, key));
    }
    if (const json* s = r.child("sgld")) {
      ObjectReader sr(*s, r.at("sgld"));
      sr.read("steps", sgld.steps);
      sr.read("step_size", sgld.step_size);
      sr.read("noise_scale", sgld.noise_scale);
      sr.finish();
      validated(r.at("sgld"), [&] { sgld.validate(); });
    }
    r.finish();
  }
  const OwnedWeight own = owned_weight(preset);
  for (const char* key : kWeightKeys) {
    const bool owned = own.key != nullptr && std::string(key) == own.key;
    double& slot = *weight_slot(w, key);
    if (owned) {
      if (given.count(key) == 0) slot = own.default_value;
      if (!(slot > 0.0)) {
        config_error(where + "." + key, std::string("preset '") + to_string(preset) + "' needs a positive value");
      }
    } else if (slot != 0.0) {
      config_error(where + "." + key, std::string("not allowed by preset '") + to_string(preset) + "'");
    }
  }
  validated(where, [&] { w.validate(); });
}

void read_guidance(const json* j, Preset preset, GuidanceConfig& g) {
  const std::string where = "guidance";
  std::string mode;
  bool has_cg = false;
  bool has_cfg = false;
  if (j != nullptr) {
    ObjectReader r(*j, where);
    r.read("mode", mode);
    has_cg = r.has("lambda_cg");
    has_cfg = r.has("lambda_cfg");
    r.read("lambda_cg", g.lambda_cg);
    r.read("lambda_cfg", g.lambda_cfg);
    r.finish();
  }
  std::vector<GuidanceMode> allowed;
  if (uses_classifier(preset)) {
    allowed = {GuidanceMode::Cg, GuidanceMode::ClassifierOnlyCond, GuidanceMode::ClassifierOnlyUncond};
  } else if (preset == Preset::Cond) {
    allowed = {GuidanceMode::Cond};
  } else {
    allowed = {GuidanceMode::Cfg};
  }
  if (mode.empty()) {
    g.mode = allowed.front();
  } else {
    validated(where + ".mode", [&] { g.mode = guidance_mode_from_string(mode); });
    if (std::find(allowed.begin(), allowed.end(), g.mode) == allowed.end()) {
      config_error(where + ".mode", std::string("'") + mode + "' is not allowed by preset '" + to_string(preset) + "'");
    }
  }
  if (g.mode == GuidanceMode::Cfg) {
    if (!has_cfg) g.lambda_cfg = 0.1;
  } else if (has_cfg && g.lambda_cfg != 0.0) {
    config_error(where + ".lambda_cfg", std::string("only used by mode 'cfg'"));
  }
  if (g.mode != GuidanceMode::Cg && has_cg && g.lambda_cg != 1.0) {
    config_error(where + ".lambda_cg", "only used by mode 'cg'");
  }
  validated(where, [&] { g.validate(); });
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// --- presets ----------------------------------------------------------------

const char* to_string(Preset preset) {
  switch (preset) {
    case Preset::Cg: return "cg";
    case Preset::CgScLabeled: return "cg-sc-labeled";
    case Preset::CgScAll: return "cg-sc-all";
    case Preset::CgDlsm: return "cg-dlsm";
    case Preset::CgJem: return "cg-jem";
    case Preset::CgLs: return "cg-ls";
    case Preset::CgJr: return "cg-jr";
    case Preset::Cond: return "cond";
    case Preset::CfgLabeled: return "cfg-labeled";
    case Preset::CfgAll: return "cfg-all";
  }
  return "?";
}

const std::vector<Preset>& all_presets() {
  static const std::vector<Preset> presets = {Preset::Cg,     Preset::CgScLabeled, Preset::CgScAll,   Preset::CgDlsm,
                                              Preset::CgJem,  Preset::CgLs,        Preset::CgJr,      Preset::Cond,
                                              Preset::CfgLabeled, Preset::CfgAll};
  return presets;
}

Preset preset_from_string(const std::string& name) {
  for (Preset p : all_presets()) {
    if (name == to_string(p)) return p;
  }
  throw Error(ErrorCode::Config, "preset: unknown preset '" + name + "'");
}

bool uses_classifier(Preset preset) { return !uses_cond_net(preset); }

bool uses_cond_net(Preset preset) {
  return preset == Preset::Cond || preset == Preset::CfgLabeled || preset == Preset::CfgAll;
}

// --- config -----------------------------------------------------------------

void ExperimentConfig::set_seed(std::uint64_t root) {
  seed = root;
  dataset.seed = root;
  score_train.seed = root;
  classifier_train.seed = root;
  cond_train.seed = root;
  sampler.seed = root;
}

void ExperimentConfig::validate() const {
  validated("dataset", [&] { dataset.validate(); });
  validated("schedule", [&] { schedule.validate(); });
  validated("score_net", [&] { score_train.validate(); });
  validated("classifier", [&] { classifier_train.validate(); });
  validated("cond_net", [&] { cond_train.validate(); });
  validated("losses", [&] { weights.validate(); });
  validated("losses.sgld", [&] { sgld.validate(); });
  validated("guidance", [&] { guidance.validate(); });
  validated("sampler", [&] { sampler.validate(); });
  validated("eval.grid", [&] { eval.grid.validate(); });
  if (!(null_prob >= 0.0 && null_prob <= 1.0)) config_error("cond_net.null_prob", "must lie in [0, 1]");
  if (!(eval.field_time >= 0.0 && eval.field_time <= schedule.horizon)) {
    config_error("eval.field_time", "must lie in [0, horizon]");
  }
  if (eval.samples_per_class < 2) config_error("eval.samples_per_class", "must be >= 2");
  if (eval.k < 1) config_error("eval.k", "must be >= 1");
  if (eval.ece_buckets < 1) config_error("eval.ece_buckets", "must be >= 1");
  if (dataset.gmm.num_classes() < 2) config_error("dataset.gmm", "guidance needs at least two classes");
}

ExperimentConfig parse_experiment_config(const json& j) {
  ExperimentConfig c;
  ObjectReader r(j, "config");
  std::string preset;
  r.read("preset", preset);
  if (preset.empty()) config_error("config.preset", "missing");
  c.preset = preset_from_string(preset);
  std::uint64_t seed = 0;
  r.read("seed", seed);

  if (const json* d = r.child("dataset")) {
    ObjectReader dr(*d, "dataset");
    dr.read("n_train", c.dataset.n_train);
    dr.read("n_test", c.dataset.n_test);
    dr.read("labeled_fraction", c.dataset.labeled_fraction);
    if (const json* g = dr.child("gmm")) c.dataset.gmm = read_gmm(*g, "dataset.gmm");
    dr.finish();
  }
  if (const json* s = r.child("schedule")) {
    ObjectReader sr(*s, "schedule");
    sr.read("sigma_min", c.schedule.sigma_min);
    sr.read("sigma_max", c.schedule.sigma_max);
    sr.read("horizon", c.schedule.horizon);
    sr.finish();
  }
  if (const json* t = r.child("score_net")) read_train(*t, "score_net", c.score_train);
  if (const json* t = r.child("classifier")) read_train(*t, "classifier", c.classifier_train);
  if (const json* t = r.child("cond_net")) read_train(*t, "cond_net", c.cond_train, &c.null_prob);
  read_losses(r.child("losses"), c.preset, c.weights, c.sgld);
  read_guidance(r.child("guidance"), c.preset, c.guidance);
  if (const json* s = r.child("sampler")) {
    ObjectReader sr(*s, "sampler");
    sr.read("n_steps", c.sampler.n_steps);
    sr.read("corrector_snr", c.sampler.corrector_snr);
    sr.read("corrector_steps", c.sampler.corrector_steps);
    sr.read("end_time", c.sampler.end_time);
    sr.finish();
  }
  if (const json* e = r.child("eval")) {
    ObjectReader er(*e, "eval");
    if (const json* g = er.child("grid")) {
      ObjectReader gr(*g, "eval.grid");
      gr.read("x_min", c.eval.grid.x_min);
      gr.read("x_max", c.eval.grid.x_max);
      gr.read("y_min", c.eval.grid.y_min);
      gr.read("y_max", c.eval.grid.y_max);
      gr.read("step", c.eval.grid.step);
      gr.finish();
    }
    er.read("field_time", c.eval.field_time);
    er.read("samples_per_class", c.eval.samples_per_class);
    er.read("k", c.eval.k);
    er.read("ece_buckets", c.eval.ece_buckets);
    er.finish();
  }
  r.finish();
  c.set_seed(seed);
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return parse_experiment_config(j);
}

json experiment_config_to_json(const ExperimentConfig& c) {
  json cond = train_to_json(c.cond_train);
  cond["null_prob"] = c.null_prob;
  return {{"preset", to_string(c.preset)},
          {"seed", c.seed},
          {"dataset",
           {{"n_train", c.dataset.n_train},
            {"n_test", c.dataset.n_test},
            {"labeled_fraction", c.dataset.labeled_fraction},
            {"gmm", gmm_to_json(c.dataset.gmm)}}},
          {"schedule",
           {{"sigma_min", c.schedule.sigma_min}, {"sigma_max", c.schedule.sigma_max}, {"horizon", c.schedule.horizon}}},
          {"score_net", train_to_json(c.score_train)},
          {"classifier", train_to_json(c.classifier_train)},
          {"cond_net", cond},
          {"losses",
           {{"lambda_sc", c.weights.lambda_sc},
            {"lambda_dlsm", c.weights.lambda_dlsm},
            {"lambda_jr", c.weights.lambda_jr},
            {"label_smoothing_eps", c.weights.label_smoothing_eps},
            {"lambda_jem", c.weights.lambda_jem},
            {"sgld",
             {{"steps", c.sgld.steps}, {"step_size", c.sgld.step_size}, {"noise_scale", c.sgld.noise_scale}}}}},
          {"guidance",
           {{"mode", to_string(c.guidance.mode)},
            {"lambda_cg", c.guidance.lambda_cg},
            {"lambda_cfg", c.guidance.lambda_cfg}}},
          {"sampler",
           {{"n_steps", c.sampler.n_steps},
            {"corrector_snr", c.sampler.corrector_snr},
            {"corrector_steps", c.sampler.corrector_steps},
            {"end_time", c.sampler.end_time}}},
          {"eval",
           {{"grid",
             {{"x_min", c.eval.grid.x_min},
              {"x_max", c.eval.grid.x_max},
              {"y_min", c.eval.grid.y_min},
              {"y_max", c.eval.grid.y_max},
              {"step", c.eval.grid.step}}},
            {"field_time", c.eval.field_time},
            {"samples_per_class", c.eval.samples_per_class},
            {"k", c.eval.k},
            {"ece_buckets", c.eval.ece_buckets}}}};
}

namespace {

bool needs_score_net(const ExperimentConfig& c) {
  if (!uses_classifier(c.preset)) return false;
  return c.guidance.mode == GuidanceMode::Cg || c.weights.lambda_dlsm > 0.0;
}

// Unlabeled pool seen by the classifier: SC-labeled keeps it out entirely.
const Dataset& classifier_unlabeled(const ExperimentConfig& c, const ToySplits& data) {
  static const Dataset none;
  return c.preset == Preset::CgScLabeled ? none : data.unlabeled;
}

CondMode cond_mode(Preset p) {
  switch (p) {
    case Preset::CfgLabeled: return CondMode::CfgLabeled;
    case Preset::CfgAll: return CondMode::CfgAll;
    default: return CondMode::Cond;
  }
}

Points all_training_points(const ToySplits& data) {
  Points x(data.labeled.size() + data.unlabeled.size(), 2);
  x << data.labeled.x, data.unlabeled.x;
  return x;
}

}  // namespace

std::vector<std::string> pipeline_stages(const ExperimentConfig& c) {
  std::vector<std::string> stages = {"gen-data"};
  if (needs_score_net(c)) stages.emplace_back("train-score");
  if (uses_classifier(c.preset)) stages.emplace_back("train-classifier");
  if (uses_cond_net(c.preset)) stages.emplace_back(std::string("train-cond (") + to_string(cond_mode(c.preset)) + ")");
  stages.emplace_back(std::string("sample (") + to_string(c.guidance.mode) + ")");
  stages.emplace_back("eval");
  return stages;
}

// --- stages -----------------------------------------------------------------

GuidanceModels TrainedModels::view() const {
  GuidanceModels m;
  if (score) m.score = &*score;
  if (classifier) m.classifier = &*classifier;
  if (cond) m.cond = &*cond;
  return m;
}

ToySplits generate_data(const ExperimentConfig& config) { return make_toy_dataset(config.dataset); }

void save_splits(const RunPaths& paths, const ToySplits& splits) {
  save_dataset(paths.labeled(), splits.labeled);
  save_dataset(paths.unlabeled(), splits.unlabeled);
  save_dataset(paths.test(), splits.test);
}

ToySplits load_splits(const RunPaths& paths) {
  return {load_dataset(paths.labeled()), load_dataset(paths.unlabeled()), load_dataset(paths.test())};
}

namespace {

// Writes the log (and the last finite parameters) of a diverged run.
template <typename MakeModel>
void persist_divergence(const RunPaths* paths, const std::string& stage, const TrainingDivergedError& e,
                        MakeModel&& make_model) {
  if (paths == nullptr) return;
  write_text_file(paths->log(stage), e.log().to_jsonl());
  write_json_file(paths->checkpoint(stage + ".last_finite"), to_checkpoint(make_model(e.last_params())));
}

template <typename Trained>
void persist_trained(const RunPaths* paths, const std::string& stage, const Trained& trained) {
  if (paths == nullptr) return;
  write_text_file(paths->log(stage), trained.log.to_jsonl());
  write_json_file(paths->checkpoint(stage), to_checkpoint(trained.model));
}

}  // namespace

ScoreNet train_score_stage(const ExperimentConfig& config, const ToySplits& data, const RunPaths* paths) {
  try {
    TrainedScoreNet t = train_score(config.score_train, config.schedule, all_training_points(data));
    persist_trained(paths, kScoreStage, t);
    return t.model;
  } catch (const TrainingDivergedError& e) {
    persist_divergence(paths, kScoreStage, e, [&](const diff::ParamSet& p) {
      return ScoreNet{config.schedule, config.score_train.net, p};
    });
    throw;
  }
}

Classifier train_classifier_stage(const ExperimentConfig& config, const ToySplits& data, const ScoreNet* external,
                                  const RunPaths* paths) {
  ClassifierLossContext ctx;
  ctx.external_score = external;
  ctx.sgld = config.sgld;
  const int k = config.dataset.gmm.num_classes();
  try {
    TrainedClassifier t = train_classifier(config.classifier_train, config.schedule, k, data.labeled,
                                           classifier_unlabeled(config, data), config.weights, ctx);
    persist_trained(paths, kClassifierStage, t);
    return t.model;
  } catch (const TrainingDivergedError& e) {
    persist_divergence(paths, kClassifierStage, e, [&](const diff::ParamSet& p) {
      return Classifier{config.schedule, config.classifier_train.net, k, p};
    });
    throw;
  }
}

CondScoreNet train_cond_stage(const ExperimentConfig& config, const ToySplits& data, const RunPaths* paths) {
  const int k = config.dataset.gmm.num_classes();
  try {
    TrainedCondScoreNet t = train_cond_score(config.cond_train, config.schedule, k, data.labeled, data.unlabeled,
                                             cond_mode(config.preset), config.null_prob);
    persist_trained(paths, kCondStage, t);
    return t.model;
  } catch (const TrainingDivergedError& e) {
    persist_divergence(paths, kCondStage, e, [&](const diff::ParamSet& p) {
      return CondScoreNet{config.schedule, config.cond_train.net, k, p};
    });
    throw;
  }
}

TrainedModels load_models(const ExperimentConfig& config, const RunPaths& paths) {
  TrainedModels m;
  if (needs_score_net(config)) m.score = score_net_from_checkpoint(read_json_file(paths.checkpoint(kScoreStage)));
  if (uses_classifier(config.preset)) {
    m.classifier = classifier_from_checkpoint(read_json_file(paths.checkpoint(kClassifierStage)));
  }
  if (uses_cond_net(config.preset)) m.cond = cond_score_net_from_checkpoint(read_json_file(paths.checkpoint(kCondStage)));
  return m;
}

SampleSet sample_stage(const ExperimentConfig& config, const TrainedModels& models) {
  const int k = config.dataset.gmm.num_classes();
  const int per_class = config.eval.samples_per_class;
  SampleSet out;
  if (config.guidance.mode == GuidanceMode::ClassifierOnlyUncond) {
    const ScoreFn fn = make_guided_score_fn(models.view(), config.guidance, kUnlabeled);
    out.x = pc_sample(fn, config.sampler, config.schedule, static_cast<Eigen::Index>(per_class) * k);
    out.labels.assign(static_cast<std::size_t>(out.x.rows()), kUnlabeled);
    return out;
  }
  out.x.resize(static_cast<Eigen::Index>(per_class) * k, 2);
  for (int y = 0; y < k; ++y) {
    SamplerConfig sc = config.sampler;
    sc.salt = static_cast<std::uint64_t>(y) + 1;
    const ScoreFn fn = make_guided_score_fn(models.view(), config.guidance, y);
    out.x.middleRows(static_cast<Eigen::Index>(y) * per_class, per_class) =
        pc_sample(fn, sc, config.schedule, per_class);
    out.labels.insert(out.labels.end(), static_cast<std::size_t>(per_class), y);
  }
  return out;
}

GradientField field_stage(const ExperimentConfig& config, const TrainedModels& models) {
  const double t = config.eval.field_time;
  if (models.classifier) return classifier_gradient_field(*models.classifier, config.eval.grid, t);
  if (!models.cond) throw Error(ErrorCode::InvalidArgument, "no model to evaluate a field from");
  const Points nodes = config.eval.grid.nodes();
  GradientField f{config.eval.grid, {}};
  for (int y = 0; y < models.cond->num_classes; ++y) f.per_class.push_back(cond_score_eval(*models.cond, nodes, y, t));
  return f;
}

MetricsReport evaluate_stage(const ExperimentConfig& config, const ToySplits& data, const TrainedModels& models,
                             const SampleSet& samples) {
  MetricsReport report;
  const GmmSpec& gmm = config.dataset.gmm;
  const double t = config.eval.field_time;
  const GridSpec& grid = config.eval.grid;
  if (models.classifier) {
    const GradientField est = classifier_gradient_field(*models.classifier, grid, t);
    const FieldMetrics fm = grad_field_metrics(est, oracle_gradient_field(gmm, config.schedule, grid, t));
    report.set("grad_mse", fm.mse);
    report.set("grad_cs", fm.cs);
    report.set("grad_cs_skipped", fm.skipped);
    const CosineResult cs = cond_score_cs(est, oracle_unconditional_field(gmm, config.schedule, grid, t),
                                          oracle_conditional_field(gmm, config.schedule, grid, t));
    report.set("cond_score_cs", cs.mean);
    report.set("ece", classifier_ece(*models.classifier, data.test.x, data.test.labels, t, config.eval.ece_buckets));
  }
  report.set("fd2", frechet_2d(data.test.x, samples.x));
  const DensityCoverage dc = density_coverage(data.test.x, samples.x, config.eval.k);
  report.set("density", dc.density);
  report.set("coverage", dc.coverage);
  const bool labeled = std::none_of(samples.labels.begin(), samples.labels.end(), [](int y) { return y == kUnlabeled; });
  if (labeled) {
    std::vector<Points> real;
    std::vector<Points> gen;
    const Dataset generated{samples.x, samples.labels};
    for (int y = 0; y < gmm.num_classes(); ++y) {
      real.push_back(data.test.points_of_class(y));
      gen.push_back(generated.points_of_class(y));
    }
    report.set("intra_fd2", intra_fd2(real, gen));
    const DensityCoverage idc = intra_density_coverage(real, gen, config.eval.k);
    report.set("intra_density", idc.density);
    report.set("intra_coverage", idc.coverage);
  }
  report.check_ranges();
  return report;
}

std::string samples_to_csv(const SampleSet& samples) { return dataset_to_csv(Dataset{samples.x, samples.labels}); }

MetricsReport run_experiment(const ExperimentConfig& config, const std::string& config_text, const RunPaths& paths,
                             const LogFn& log, const ScoreNet* shared_score) {
  const auto say = [&](const std::string& msg) {
    if (log) log(msg);
  };
  write_text_file(paths.config(), config_text);
  write_text_file(paths.resolved_config(), experiment_config_to_json(config).dump(2) + "\n");

  say("gen-data");
  const ToySplits data = generate_data(config);
  save_splits(paths, data);

  TrainedModels models;
  if (needs_score_net(config)) {
    if (shared_score != nullptr) {
      models.score = *shared_score;
      write_json_file(paths.checkpoint(kScoreStage), to_checkpoint(*shared_score));
    } else {
      say("train-score");
      models.score = train_score_stage(config, data, &paths);
    }
  }
  if (uses_classifier(config.preset)) {
    say("train-classifier");
    models.classifier = train_classifier_stage(config, data, models.score ? &*models.score : nullptr, &paths);
  }
  if (uses_cond_net(config.preset)) {
    say("train-cond");
    models.cond = train_cond_stage(config, data, &paths);
  }
  say("sample");
  const SampleSet samples = sample_stage(config, models);
  write_text_file(paths.samples(), samples_to_csv(samples));
  write_text_file(paths.fields(), field_to_csv(field_stage(config, models)));
  say("eval");
  const MetricsReport report = evaluate_stage(config, data, models, samples);
  write_text_file(paths.metrics(), report.to_json().dump(2) + "\n");
  return report;
}

MetricsReport evaluate_run(const RunPaths& paths) {
  const ExperimentConfig config = load_experiment_config(paths.resolved_config());
  const ToySplits data = load_splits(paths);
  const TrainedModels models = load_models(config, paths);
  return evaluate_stage(config, data, models, sample_stage(config, models));
}

// --- compare ----------------------------------------------------------------

std::vector<CompareRow> collect_runs(const std::vector<std::filesystem::path>& run_dirs) {
  std::vector<CompareRow> rows;
  for (const auto& dir : run_dirs) {
    const RunPaths paths{dir};
    CompareRow row;
    row.run = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
    row.metrics = MetricsReport::from_json(read_json_file(paths.metrics()));
    if (std::filesystem::exists(paths.resolved_config())) {
      const json cfg = read_json_file(paths.resolved_config());
      row.preset = cfg.value("preset", "");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::vector<std::string> metric_columns(const std::vector<CompareRow>& rows) {
  std::set<std::string> names;
  for (const CompareRow& r : rows) {
    for (const auto& [name, v] : r.metrics.values) names.insert(name);
  }
  return {names.begin(), names.end()};
}

}  // namespace

std::string compare_to_csv(const std::vector<CompareRow>& rows) {
  const std::vector<std::string> cols = metric_columns(rows);
  std::string out = "run,preset";
  for (const std::string& c : cols) out += "," + c;
  out += "\n";
  for (const CompareRow& r : rows) {
    out += r.run + "," + r.preset;
    for (const std::string& c : cols) {
      out += ",";
      const auto it = r.metrics.values.find(c);
      if (it != r.metrics.values.end()) out += format_double(it->second);
    }
    out += "\n";
  }
  return out;
}

json compare_to_json(const std::vector<CompareRow>& rows) {
  json out;
  out["columns"] = metric_columns(rows);
  out["rows"] = json::array();
  for (const CompareRow& r : rows) {
    out["rows"].push_back({{"run", r.run}, {"preset", r.preset}, {"metrics", r.metrics.to_json()}});
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) { return read_text(path); }

}  // namespace selfcal
