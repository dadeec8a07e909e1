#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "tristream/config_json.hpp"
#include "tristream/error.hpp"

using namespace tristream;
using nlohmann::json;

namespace {

std::string config_error(const json& j) {
  RunConfig r;
  try {
    from_json(j, r);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ConfigJson, RoundTrip) {
  RunConfig r;
  r.model.channels = 16;
  r.model.stream_b.se_gate = layers::Gate::relu;
  r.model.stream_c.combine = layers::Combine::concat;
  r.model.stream_a.dilations = {1, 2, 4};
  r.train.learning_rate = 0.0025;
  r.preprocess.split.mode = data::SplitMode::repetition;
  r.preprocess.split.test_reps = {2, 5, 7};
  r.ablation.attention = false;
  RunConfig back;
  from_json(to_json(r), back);
  EXPECT_EQ(to_json(back), to_json(r));
  EXPECT_EQ(back.model.stream_b.se_gate, layers::Gate::relu);
  EXPECT_FALSE(back.ablation.attention);
}

TEST(ConfigJson, PartialPatchKeepsDefaults) {
  RunConfig r;
  from_json(json{{"train", {{"epochs", 7}}}}, r);
  EXPECT_EQ(r.train.epochs, 7u);
  EXPECT_DOUBLE_EQ(r.train.learning_rate, TrainConfig{}.learning_rate);
  EXPECT_EQ(r.model.window, 500u);
}

TEST(ConfigJson, UnknownKeysNamePath) {
  EXPECT_EQ(config_error(json{{"modle", json::object()}}), "unknown key modle");
  EXPECT_EQ(config_error(json{{"model", {{"stream_b", {{"se_gaet", "relu"}}}}}}), "unknown key model.stream_b.se_gaet");
}

TEST(ConfigJson, WrongTypesNamePath) {
  EXPECT_NE(config_error(json{{"train", {{"epochs", -3}}}}).find("train.epochs"), std::string::npos);
  EXPECT_NE(config_error(json{{"train", {{"learning_rate", "fast"}}}}).find("train.learning_rate"), std::string::npos);
  EXPECT_EQ(config_error(json{{"model", {{"stream_b", {{"se_gate", "tanh"}}}}}}),
            "model.stream_b.se_gate must be one of: sigmoid, relu");
  EXPECT_NE(config_error(json{{"model", 3}}).find("model must be a JSON object"), std::string::npos);
}

TEST(ConfigJson, FileErrors) {
  RunConfig r;
  EXPECT_THROW(apply_config_file("/nonexistent/tristream.json", r), ConfigError);
  const auto path = std::filesystem::temp_directory_path() / "tristream_test_bad.json";
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(apply_config_file(path.string(), r), ConfigError);
  std::ofstream(path) << R"({"model": {"num_classes": 6}})";
  apply_config_file(path.string(), r);
  EXPECT_EQ(r.model.num_classes, 6u);
  std::filesystem::remove(path);
}
