#include "tristream/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "tristream/config_json.hpp"
#include "tristream/error.hpp"
#include "tristream/parallel.hpp"

namespace tristream {

namespace {

using layers::Mode;
using Json = nlohmann::json;

layers::SeSpec se_spec(const ModelConfig& c) {
  return {c.stream_b.separable_filters, c.stream_b.se_ratio, c.stream_b.se_gate};
}

layers::SeparableSpec separable_spec(const ModelConfig& c) {
  return {c.stream_b.conv_filters, c.stream_b.separable_filters, c.stream_b.kernel_size, 1};
}

layers::LstmSpec lstm_spec(const ModelConfig& c) { return {c.stream_c.tcn_filters, c.stream_c.lstm_hidden}; }

// Adds the layer name to numeric failures raised while building it.
template <typename F>
ad::Var guarded(const char* layer, F&& f) {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(std::string("layer '") + layer + "': " + e.what());
  }
}

}  // namespace

layers::TcnStackSpec ModelConfig::stream_a_stack() const {
  return {channels, stream_a.filters, stream_a.kernel_size, stream_a.dilations};
}

layers::TcnStackSpec ModelConfig::stream_c_stack() const {
  return {channels, stream_c.tcn_filters, stream_c.kernel_size, stream_c.dilations};
}

std::size_t fused_width(const ModelConfig& config, const AblationFlags& flags) {
  return (flags.stream_a ? config.stream_a_width() : 0) + (flags.stream_b ? config.stream_b_width() : 0) +
         (flags.stream_c ? config.stream_c_width() : 0);
}

std::vector<std::string> validate(const ModelConfig& c, const AblationFlags& flags) {
  std::vector<std::string> errors;
  auto positive = [&](std::size_t v, const char* name) {
    if (v == 0) errors.push_back(std::string(name) + " must be positive");
  };
  positive(c.channels, "channels");
  positive(c.window, "window");
  if (c.num_classes < 2) errors.push_back("num_classes must be >= 2");
  if (!flags.stream_a && !flags.stream_b && !flags.stream_c) errors.push_back("at least one stream must be enabled");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) errors.push_back("dropout must be in [0, 1)");
  if (flags.stream_a) {
    positive(c.stream_a.filters, "stream_a.filters");
    positive(c.stream_a.kernel_size, "stream_a.kernel_size");
    if (c.stream_a.dilations.empty()) errors.push_back("stream_a.dilations must not be empty");
    for (std::size_t d : c.stream_a.dilations) positive(d, "stream_a dilation");
  }
  if (flags.stream_b) {
    positive(c.stream_b.conv_filters, "stream_b.conv_filters");
    positive(c.stream_b.kernel_size, "stream_b.kernel_size");
    positive(c.stream_b.separable_filters, "stream_b.separable_filters");
    positive(c.stream_b.se_ratio, "stream_b.se_ratio");
    if (c.stream_b.se_ratio && (c.stream_b.separable_filters % c.stream_b.se_ratio != 0 ||
                                c.stream_b.se_ratio > c.stream_b.separable_filters)) {
      errors.push_back("stream_b.separable_filters (" + std::to_string(c.stream_b.separable_filters) +
                       ") not divisible by se_ratio (" + std::to_string(c.stream_b.se_ratio) + ")");
    }
  }
  if (flags.stream_c) {
    positive(c.stream_c.tcn_filters, "stream_c.tcn_filters");
    positive(c.stream_c.kernel_size, "stream_c.kernel_size");
    positive(c.stream_c.lstm_hidden, "stream_c.lstm_hidden");
    if (c.stream_c.dilations.empty()) errors.push_back("stream_c.dilations must not be empty");
    for (std::size_t d : c.stream_c.dilations) positive(d, "stream_c dilation");
  }
  if (flags.attention) {
    const std::size_t width = fused_width(c, flags);
    if (c.attention_ratio == 0) {
      errors.push_back("attention_ratio must be positive");
    } else if (width && (width % c.attention_ratio != 0 || c.attention_ratio > width)) {
      errors.push_back("fused width " + std::to_string(width) + " not divisible by attention_ratio " +
                       std::to_string(c.attention_ratio));
    }
  }
  return errors;
}

void require_valid(const ModelConfig& config, const AblationFlags& flags) {
  const auto errors = validate(config, flags);
  if (errors.empty()) return;
  std::string msg = "invalid model configuration:";
  for (const auto& e : errors) msg += "\n  - " + e;
  throw ConfigError(msg);
}

ParamStore build(const ModelConfig& config, const AblationFlags& flags, Rng& rng) {
  require_valid(config, flags);
  ParamStore store;
  if (flags.stream_a) layers::init_bitcn(store, "a", config.stream_a_stack(), rng);
  if (flags.stream_b) {
    const std::size_t cf = config.stream_b.conv_filters, K = config.stream_b.kernel_size;
    store.add("b.conv.weight", layers::he_uniform({cf, config.channels, K}, config.channels * K, rng));
    store.add("b.conv.bias", Tensor({cf}));
    layers::init_separable(store, "b.sep", separable_spec(config), rng);
    layers::init_se(store, "b.se", se_spec(config), rng);
  }
  if (flags.stream_c) {
    layers::init_tcn_stack(store, "c.tcn", config.stream_c_stack(), rng);
    layers::init_bilstm(store, "c.lstm", lstm_spec(config), rng);
  }
  const std::size_t width = fused_width(config, flags);
  if (flags.attention) layers::init_channel_attention(store, "attn", {width, config.attention_ratio}, rng);
  layers::init_dense(store, "head", {width, config.num_classes}, rng);
  return store;
}

ad::Var forward_sample(const ad::Binder& p, const ModelConfig& config, const AblationFlags& flags, ad::Var x,
                       Mode mode, Rng& dropout_rng) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.dim(0) != config.channels || xv.dim(1) != config.window) {
    throw ShapeError("forward: window " + shape_str(xv.shape()) + " does not match configured [" +
                     std::to_string(config.channels) + ", " + std::to_string(config.window) + "]");
  }
  std::vector<ad::Var> features;
  if (flags.stream_a) {
    features.push_back(guarded("stream_a", [&] {
      return ad::avg_pool_time(layers::bitcn(p, "a", config.stream_a_stack(), x));
    }));
  }
  if (flags.stream_b) {
    features.push_back(guarded("stream_b", [&] {
      ad::Var h = ad::relu(ad::conv1d_causal(x, p("b.conv.weight"), p("b.conv.bias"), 1));
      h = layers::separable_stack(p, "b.sep", separable_spec(config), h);
      h = layers::se_block(p, "b.se", se_spec(config), h);
      return ad::avg_pool_time(h);
    }));
  }
  if (flags.stream_c) {
    features.push_back(guarded("stream_c", [&] {
      ad::Var h = layers::tcn_stack(p, "c.tcn", config.stream_c_stack(), x);
      h = layers::bilstm(p, "c.lstm", h, config.stream_c.combine);
      return ad::avg_pool_time(h);
    }));
  }
  return guarded("head", [&] {
    ad::Var fused = ad::concat_channels(features);
    fused = layers::dropout(fused, config.dropout, mode, dropout_rng);
    if (flags.attention) fused = layers::channel_attention(p, "attn", fused);
    return layers::dense(p, "head", fused);
  });
}

Tensor forward(const ParamStore& params, const ModelConfig& config, const AblationFlags& flags, const Tensor& batch,
               Mode mode, std::uint64_t dropout_seed) {
  if (batch.rank() != 3 || batch.dim(1) != config.channels || batch.dim(2) != config.window) {
    throw ShapeError("forward: batch " + shape_str(batch.shape()) + " does not match [B, " +
                     std::to_string(config.channels) + ", " + std::to_string(config.window) + "]");
  }
  const std::size_t B = batch.dim(0), K = config.num_classes;
  Tensor logits({B, K});
  parallel_for(B, [&](std::size_t b) {
    ad::Graph g(false);
    ad::Binder bind(g, params);
    Rng rng(Rng::derive(dropout_seed, b));
    const auto row = batch.row(b);
    ad::Var x = g.constant(Tensor({config.channels, config.window}, std::vector<double>(row.begin(), row.end())));
    const Tensor& out = forward_sample(bind, config, flags, x, mode, rng).value();
    std::copy(out.data().begin(), out.data().end(), logits.row(b).begin());
  });
  return logits;
}

// --- FLOPs ---------------------------------------------------------------------

namespace {

struct FlopCounter {
  FlopReport report;
  void add(std::string name, std::uint64_t flops) {
    report.layers.push_back({std::move(name), flops});
    report.total += flops;
  }
};

using u64 = std::uint64_t;

void count_tcn_stack(FlopCounter& fc, const std::string& prefix, const layers::TcnStackSpec& spec, u64 T) {
  const auto blocks = spec.blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string name = prefix + ".block" + std::to_string(i);
    const u64 in = b.in_channels, out = b.out_channels, K = b.kernel_size;
    fc.add(name + ".conv1", 2 * out * in * K * T);
    fc.add(name + ".relu1", out * T);
    fc.add(name + ".conv2", 2 * out * out * K * T);
    if (b.has_projection()) fc.add(name + ".proj", 2 * out * in * T);
    fc.add(name + ".residual_add", out * T);
    fc.add(name + ".relu2", out * T);
  }
}

void count_lstm(FlopCounter& fc, const std::string& name, u64 in, u64 H, u64 T) {
  // Gate affine maps plus 9H elementwise ops per step (4 gate activations,
  // 3 for the cell update, tanh of the cell, output product).
  fc.add(name + ".gates", 2 * 4 * H * (in + H) * T);
  fc.add(name + ".cell", 9 * H * T);
}

}  // namespace

FlopReport count_flops(const ModelConfig& config, const AblationFlags& flags, std::size_t input_len) {
  require_valid(config, flags);
  FlopCounter fc;
  const u64 T = input_len, C = config.channels;
  if (flags.stream_a) {
    count_tcn_stack(fc, "a.fwd", config.stream_a_stack(), T);
    count_tcn_stack(fc, "a.bwd", config.stream_a_stack(), T);
    fc.add("a.pool", config.stream_a_width() * T);
  }
  if (flags.stream_b) {
    const u64 cf = config.stream_b.conv_filters, K = config.stream_b.kernel_size;
    const u64 sf = config.stream_b.separable_filters, r = sf / config.stream_b.se_ratio;
    fc.add("b.conv", 2 * cf * C * K * T);
    fc.add("b.conv.relu", cf * T);
    fc.add("b.sep.depthwise", 2 * cf * K * T);
    fc.add("b.sep.pointwise", 2 * sf * cf * T);
    fc.add("b.sep.relu", sf * T);
    fc.add("b.se.squeeze", sf * T);
    fc.add("b.se.excite", 2 * r * sf + r + 2 * sf * r + sf);
    fc.add("b.se.scale", sf * T);
    fc.add("b.pool", sf * T);
  }
  if (flags.stream_c) {
    count_tcn_stack(fc, "c.tcn", config.stream_c_stack(), T);
    const u64 H = config.stream_c.lstm_hidden, in = config.stream_c.tcn_filters;
    count_lstm(fc, "c.lstm.fwd", in, H, T);
    count_lstm(fc, "c.lstm.bwd", in, H, T);
    if (config.stream_c.combine == layers::Combine::sum) fc.add("c.lstm.combine", H * T);
    fc.add("c.pool", config.stream_c_width() * T);
  }
  const u64 width = fused_width(config, flags);
  if (flags.attention) {
    const u64 r = width / config.attention_ratio;
    fc.add("attn", 2 * r * width + r + 2 * width * r + width + width);
  }
  fc.add("head", 2 * width * config.num_classes);
  return fc.report;
}

// --- Checkpoints ---------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'T', 'S', 'W', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

double get_f64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Json manifest = Json::array();
  for (const auto& e : ckpt.params.entries()) manifest.push_back({{"name", e.name}, {"shape", e.value.shape()}});
  const Json header = {{"format_version", 1},
                       {"config", {{"model", to_json(ckpt.config)}, {"ablation", to_json(ckpt.flags)}}},
                       {"parameters", manifest}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + ckpt.params.scalar_count() * 8);
  for (const auto& e : ckpt.params.entries()) {
    for (double v : e.value.data()) put_f64(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic (expected \"TSW1\")");
  }
  const std::size_t header_len = get_u32(bytes, 4);
  if (bytes.size() < 8 + header_len) {
    throw FormatError("checkpoint: truncated header, expected " + std::to_string(8 + header_len) +
                      " bytes, file has " + std::to_string(bytes.size()));
  }
  Json header;
  try {
    header = Json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint: header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || header.value("format_version", 0) != 1) {
    throw FormatError("checkpoint: unsupported format_version");
  }
  Checkpoint ckpt;
  try {
    from_json(header.at("config").at("model"), ckpt.config);
    from_json(header.at("config").at("ablation"), ckpt.flags);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed config: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: malformed config: ") + e.what());
  }

  // Shapes must agree with what the config implies.
  Rng unused(0);
  ParamStore expected;
  try {
    expected = build(ckpt.config, ckpt.flags, unused);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
  }
  const Json& manifest = header.at("parameters");
  if (!manifest.is_array() || manifest.size() != expected.size()) {
    throw FormatError("checkpoint: manifest lists " + std::to_string(manifest.size()) + " parameters, config implies " +
                      std::to_string(expected.size()));
  }
  std::size_t pos = 8 + header_len;
  const std::size_t payload = expected.scalar_count() * 8;
  if (bytes.size() != pos + payload) {
    throw FormatError("checkpoint: payload size mismatch, expected " + std::to_string(pos + payload) +
                      " bytes, file has " + std::to_string(bytes.size()));
  }
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    auto& entry = expected.entries()[i];
    const std::string name = manifest[i].at("name").get<std::string>();
    const Shape shape = manifest[i].at("shape").get<Shape>();
    if (name != entry.name || shape != entry.value.shape()) {
      throw FormatError("checkpoint: manifest entry " + name + " " + shape_str(shape) + " disagrees with config (" +
                        entry.name + " " + shape_str(entry.value.shape()) + ")");
    }
    for (double& v : entry.value.data()) {
      v = get_f64(bytes, pos);
      pos += 8;
    }
  }
  ckpt.params = std::move(expected);
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace tristream
