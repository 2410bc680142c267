#include "selfcal/models/checkpoint.hpp"

#include "selfcal/error.hpp"

#include <fstream>

namespace selfcal {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "selfcal-checkpoint";
constexpr int kVersion = 1;

json header(const char* kind, const NoiseSchedule& s, const NetConfig& c, int num_classes,
            const diff::ParamSet& params) {
  return json{{"format", kFormat},
              {"version", kVersion},
              {"kind", kind},
              {"schedule", schedule_to_json(s)},
              {"net", net_config_to_json(c)},
              {"num_classes", num_classes},
              {"arrays", params_to_json(params)}};
}

void expect_kind(const json& j, const char* kind) {
  try {
    if (j.at("format").get<std::string>() != kFormat) throw Error(ErrorCode::ParseError, "not a selfcal checkpoint");
    if (j.at("version").get<int>() != kVersion) throw Error(ErrorCode::ParseError, "unsupported checkpoint version");
    if (j.at("kind").get<std::string>() != kind) {
      throw Error(ErrorCode::ParseError, "checkpoint holds a " + j.at("kind").get<std::string>() + ", expected " + kind);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

}  // namespace

json params_to_json(const diff::ParamSet& params) {
  json arrays = json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const diff::Matrix& m = params[i];
    arrays.push_back({{"name", params.name(i)},
                      {"rows", m.rows()},
                      {"cols", m.cols()},
                      {"data", std::vector<double>(m.data(), m.data() + m.size())}});
  }
  return arrays;
}

diff::ParamSet params_from_json(const json& j) {
  diff::ParamSet params;
  try {
    for (const json& a : j) {
      const auto rows = a.at("rows").get<Eigen::Index>();
      const auto cols = a.at("cols").get<Eigen::Index>();
      const auto data = a.at("data").get<std::vector<double>>();
      if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
        throw Error(ErrorCode::ParseError, "array " + a.at("name").get<std::string>() + " has inconsistent size");
      }
      params.add(a.at("name").get<std::string>(), Eigen::Map<const diff::Matrix>(data.data(), rows, cols));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  return params;
}

json schedule_to_json(const NoiseSchedule& s) {
  return {{"sigma_min", s.sigma_min}, {"sigma_max", s.sigma_max}, {"horizon", s.horizon}};
}

NoiseSchedule schedule_from_json(const json& j) {
  NoiseSchedule s;
  s.sigma_min = j.value("sigma_min", s.sigma_min);
  s.sigma_max = j.value("sigma_max", s.sigma_max);
  s.horizon = j.value("horizon", s.horizon);
  return s;
}

json net_config_to_json(const NetConfig& c) {
  return {{"hidden", c.hidden},
          {"depth", c.depth},
          {"time_features", c.time_features},
          {"max_frequency", c.max_frequency},
          {"data_scale", c.data_scale},
          {"activation", to_string(c.activation)},
          {"zero_init_output", c.zero_init_output}};
}

NetConfig net_config_from_json(const json& j) {
  NetConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.depth = j.value("depth", c.depth);
  c.time_features = j.value("time_features", c.time_features);
  c.max_frequency = j.value("max_frequency", c.max_frequency);
  c.data_scale = j.value("data_scale", c.data_scale);
  c.activation = activation_from_string(j.value("activation", std::string(to_string(c.activation))));
  c.zero_init_output = j.value("zero_init_output", c.zero_init_output);
  return c;
}

json to_checkpoint(const ScoreNet& net) { return header("score_net", net.schedule, net.config, 0, net.params); }

json to_checkpoint(const Classifier& cls) {
  return header("classifier", cls.schedule, cls.config, cls.num_classes, cls.params);
}

json to_checkpoint(const CondScoreNet& net) {
  return header("cond_score_net", net.schedule, net.config, net.num_classes, net.params);
}

ScoreNet score_net_from_checkpoint(const json& j) {
  expect_kind(j, "score_net");
  return {schedule_from_json(j.at("schedule")), net_config_from_json(j.at("net")), params_from_json(j.at("arrays"))};
}

Classifier classifier_from_checkpoint(const json& j) {
  expect_kind(j, "classifier");
  return {schedule_from_json(j.at("schedule")), net_config_from_json(j.at("net")), j.at("num_classes").get<int>(),
          params_from_json(j.at("arrays"))};
}

CondScoreNet cond_score_net_from_checkpoint(const json& j) {
  expect_kind(j, "cond_score_net");
  return {schedule_from_json(j.at("schedule")), net_config_from_json(j.at("net")), j.at("num_classes").get<int>(),
          params_from_json(j.at("arrays"))};
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace selfcal
