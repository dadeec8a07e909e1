#pragma once

#include <nlohmann/json.hpp>

#include "tristream/data.hpp"
#include "tristream/model.hpp"
#include "tristream/train.hpp"

namespace tristream {

/// Everything a run needs, as read from a config file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  data::PreprocessConfig preprocess;
  AblationFlags ablation;
};

// Serialization. from_json applies `j` as a patch: keys that are present
// overwrite the target, absent keys keep their current value. Unknown keys
// and wrong types throw ConfigError naming the offending path.

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const AblationFlags& f);
nlohmann::json to_json(const TrainConfig& t);
nlohmann::json to_json(const data::PreprocessConfig& p);
nlohmann::json to_json(const RunConfig& r);

void from_json(const nlohmann::json& j, ModelConfig& c);
void from_json(const nlohmann::json& j, AblationFlags& f);
void from_json(const nlohmann::json& j, TrainConfig& t);
void from_json(const nlohmann::json& j, data::PreprocessConfig& p);
void from_json(const nlohmann::json& j, RunConfig& r);

/// Reads and patches a config file. Missing file or bad JSON -> ConfigError.
void apply_config_file(const std::string& path, RunConfig& r);

}  // namespace tristream
