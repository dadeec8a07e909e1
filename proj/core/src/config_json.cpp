#include "tristream/config_json.hpp"

#include <fstream>
#include <set>
#include <string>

#include "tristream/error.hpp"

namespace tristream {

using Json = nlohmann::json;

namespace {

/// Walks one JSON object, consuming known keys and rejecting the rest.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown key " + child(key));
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw ConfigError(child(key) + " has the wrong type");
    }
  }

  void get_size(const char* key, std::size_t& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const Json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) throw ConfigError(child(key) + " must be a non-negative integer");
    out = v.get<std::size_t>();
  }

  void get_number(const char* key, double& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const Json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(child(key) + " must be a number");
    out = v.get<double>();
  }

  template <typename Enum, std::size_t N>
  void get_enum(const char* key, Enum& out, const std::pair<const char*, Enum> (&options)[N]) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const Json& v = j_.at(key);
    std::string allowed;
    for (const auto& [name, value] : options) {
      if (v.is_string() && v.get<std::string>() == name) {
        out = value;
        return;
      }
      allowed += (allowed.empty() ? "" : ", ") + std::string(name);
    }
    throw ConfigError(child(key) + " must be one of: " + allowed);
  }

  /// Calls fn(sub_json, sub_path) when the key is present.
  template <typename Fn>
  void nested(const char* key, Fn&& fn) {
    seen_.insert(key);
    if (j_.contains(key)) fn(j_.at(key), child(key));
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

constexpr std::pair<const char*, layers::Gate> kGates[] = {{"sigmoid", layers::Gate::sigmoid},
                                                           {"relu", layers::Gate::relu}};
constexpr std::pair<const char*, layers::Combine> kCombines[] = {{"sum", layers::Combine::sum},
                                                                 {"concat", layers::Combine::concat}};
constexpr std::pair<const char*, data::Standardize> kStandardize[] = {{"none", data::Standardize::none},
                                                                      {"window", data::Standardize::window}};
constexpr std::pair<const char*, data::SplitMode> kSplitModes[] = {{"ratio", data::SplitMode::ratio},
                                                                   {"repetition", data::SplitMode::repetition}};

template <typename Enum, std::size_t N>
const char* enum_name(Enum e, const std::pair<const char*, Enum> (&options)[N]) {
  for (const auto& [name, value] : options) {
    if (value == e) return name;
  }
  return "?";
}

void model_from(const Json& j, const std::string& path, ModelConfig& c) {
  Section s(j, path);
  s.get_size("channels", c.channels);
  s.get_size("window", c.window);
  s.get_size("num_classes", c.num_classes);
  s.nested("stream_a", [&](const Json& sub, const std::string& p) {
    Section a(sub, p);
    a.get_size("filters", c.stream_a.filters);
    a.get_size("kernel_size", c.stream_a.kernel_size);
    a.get("dilations", c.stream_a.dilations);
  });
  s.nested("stream_b", [&](const Json& sub, const std::string& p) {
    Section b(sub, p);
    b.get_size("conv_filters", c.stream_b.conv_filters);
    b.get_size("kernel_size", c.stream_b.kernel_size);
    b.get_size("separable_filters", c.stream_b.separable_filters);
    b.get_size("se_ratio", c.stream_b.se_ratio);
    b.get_enum("se_gate", c.stream_b.se_gate, kGates);
  });
  s.nested("stream_c", [&](const Json& sub, const std::string& p) {
    Section cc(sub, p);
    cc.get_size("tcn_filters", c.stream_c.tcn_filters);
    cc.get_size("kernel_size", c.stream_c.kernel_size);
    cc.get("dilations", c.stream_c.dilations);
    cc.get_size("lstm_hidden", c.stream_c.lstm_hidden);
    cc.get_enum("combine", c.stream_c.combine, kCombines);
  });
  s.get_number("dropout", c.dropout);
  s.get_size("attention_ratio", c.attention_ratio);
}

void ablation_from(const Json& j, const std::string& path, AblationFlags& f) {
  Section s(j, path);
  s.get("stream_a", f.stream_a);
  s.get("stream_b", f.stream_b);
  s.get("stream_c", f.stream_c);
  s.get("attention", f.attention);
}

void train_from(const Json& j, const std::string& path, TrainConfig& t) {
  Section s(j, path);
  s.get_number("learning_rate", t.learning_rate);
  s.get_size("batch_size", t.batch_size);
  s.get_size("epochs", t.epochs);
  s.get("seed", t.seed);
  s.get_size("patience", t.patience);
}

void preprocess_from(const Json& j, const std::string& path, data::PreprocessConfig& p) {
  Section s(j, path);
  s.get_size("window", p.window);
  s.get_size("stride", p.stride);
  s.get_number("noise_variance", p.noise_variance);
  s.get_size("augment_copies", p.augment_copies);
  s.get_number("epsilon", p.epsilon);
  s.get("include_rest", p.include_rest);
  s.get_enum("standardize", p.standardize, kStandardize);
  s.nested("split", [&](const Json& sub, const std::string& sp) {
    Section sp_sec(sub, sp);
    sp_sec.get_enum("mode", p.split.mode, kSplitModes);
    sp_sec.get("ratios", p.split.ratios);
    sp_sec.get("train_reps", p.split.train_reps);
    sp_sec.get("test_reps", p.split.test_reps);
  });
}

}  // namespace

Json to_json(const ModelConfig& c) {
  return {{"channels", c.channels},
          {"window", c.window},
          {"num_classes", c.num_classes},
          {"stream_a",
           {{"filters", c.stream_a.filters},
            {"kernel_size", c.stream_a.kernel_size},
            {"dilations", c.stream_a.dilations}}},
          {"stream_b",
           {{"conv_filters", c.stream_b.conv_filters},
            {"kernel_size", c.stream_b.kernel_size},
            {"separable_filters", c.stream_b.separable_filters},
            {"se_ratio", c.stream_b.se_ratio},
            {"se_gate", enum_name(c.stream_b.se_gate, kGates)}}},
          {"stream_c",
           {{"tcn_filters", c.stream_c.tcn_filters},
            {"kernel_size", c.stream_c.kernel_size},
            {"dilations", c.stream_c.dilations},
            {"lstm_hidden", c.stream_c.lstm_hidden},
            {"combine", enum_name(c.stream_c.combine, kCombines)}}},
          {"dropout", c.dropout},
          {"attention_ratio", c.attention_ratio}};
}

Json to_json(const AblationFlags& f) {
  return {{"stream_a", f.stream_a}, {"stream_b", f.stream_b}, {"stream_c", f.stream_c}, {"attention", f.attention}};
}

Json to_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"seed", t.seed},
          {"patience", t.patience}};
}

Json to_json(const data::PreprocessConfig& p) {
  return {{"window", p.window},
          {"stride", p.stride},
          {"noise_variance", p.noise_variance},
          {"augment_copies", p.augment_copies},
          {"epsilon", p.epsilon},
          {"include_rest", p.include_rest},
          {"standardize", enum_name(p.standardize, kStandardize)},
          {"split",
           {{"mode", enum_name(p.split.mode, kSplitModes)},
            {"ratios", p.split.ratios},
            {"train_reps", p.split.train_reps},
            {"test_reps", p.split.test_reps}}}};
}

Json to_json(const RunConfig& r) {
  return {{"model", to_json(r.model)},
          {"train", to_json(r.train)},
          {"preprocess", to_json(r.preprocess)},
          {"ablation", to_json(r.ablation)}};
}

void from_json(const Json& j, ModelConfig& c) { model_from(j, "model", c); }
void from_json(const Json& j, AblationFlags& f) { ablation_from(j, "ablation", f); }
void from_json(const Json& j, TrainConfig& t) { train_from(j, "train", t); }
void from_json(const Json& j, data::PreprocessConfig& p) { preprocess_from(j, "preprocess", p); }

void from_json(const Json& j, RunConfig& r) {
  Section s(j, "");
  s.nested("model", [&](const Json& sub, const std::string& p) { model_from(sub, p, r.model); });
  s.nested("train", [&](const Json& sub, const std::string& p) { train_from(sub, p, r.train); });
  s.nested("preprocess", [&](const Json& sub, const std::string& p) { preprocess_from(sub, p, r.preprocess); });
  s.nested("ablation", [&](const Json& sub, const std::string& p) { ablation_from(sub, p, r.ablation); });
}

void apply_config_file(const std::string& path, RunConfig& r) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  from_json(j, r);
}

}  // namespace tristream
