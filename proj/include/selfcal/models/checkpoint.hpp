#pragma once

#include "selfcal/models/classifier.hpp"
#include "selfcal/models/cond_score_net.hpp"
#include "selfcal/models/score_net.hpp"

#include <json.hpp>

#include <filesystem>

namespace selfcal {

// Checkpoints are JSON objects:
//   {"format": "selfcal-checkpoint", "version": 1,
//    "kind": "score_net" | "classifier" | "cond_score_net",
//    "schedule": {...}, "net": {...}, "num_classes": K,
//    "arrays": [{"name": ..., "rows": r, "cols": c, "data": [column-major doubles]}]}
// Doubles are written in shortest round-trip form, so load(save(p)) == p.

nlohmann::json params_to_json(const diff::ParamSet& params);
diff::ParamSet params_from_json(const nlohmann::json& j);

nlohmann::json schedule_to_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const nlohmann::json& j);
nlohmann::json net_config_to_json(const NetConfig& c);
NetConfig net_config_from_json(const nlohmann::json& j);

nlohmann::json to_checkpoint(const ScoreNet& net);
nlohmann::json to_checkpoint(const Classifier& cls);
nlohmann::json to_checkpoint(const CondScoreNet& net);
ScoreNet score_net_from_checkpoint(const nlohmann::json& j);
Classifier classifier_from_checkpoint(const nlohmann::json& j);
CondScoreNet cond_score_net_from_checkpoint(const nlohmann::json& j);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace selfcal
