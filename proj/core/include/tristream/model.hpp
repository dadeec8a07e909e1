#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tristream/autodiff.hpp"
#include "tristream/layers.hpp"
#include "tristream/params.hpp"
#include "tristream/rng.hpp"
#include "tristream/tensor.hpp"

namespace tristream {

/// Architecture hyperparameters of the three-stream classifier.
///
/// Stream A is the Bi-TCN, stream B the Conv1D -> separable conv -> SE path,
/// stream C the TCN -> BiLSTM path. In the published ablation table these are
/// "Branch-3 (BiTCN)", "Branch-2 (CNN)" and "Branch-1 (BiLSTM)".
struct ModelConfig {
  std::size_t channels = 12;
  std::size_t window = 500;
  std::size_t num_classes = 52;

  struct StreamA {
    std::size_t filters = 32;
    std::size_t kernel_size = 3;
    std::vector<std::size_t> dilations{1};
  } stream_a;

  struct StreamB {
    std::size_t conv_filters = 2;
    std::size_t kernel_size = 3;
    std::size_t separable_filters = 32;
    std::size_t se_ratio = 4;
    layers::Gate se_gate = layers::Gate::sigmoid;
  } stream_b;

  struct StreamC {
    std::size_t tcn_filters = 32;
    std::size_t kernel_size = 3;
    std::vector<std::size_t> dilations{1};
    std::size_t lstm_hidden = 32;
    layers::Combine combine = layers::Combine::sum;
  } stream_c;

  double dropout = 0.2;
  std::size_t attention_ratio = 4;

  layers::TcnStackSpec stream_a_stack() const;
  layers::TcnStackSpec stream_c_stack() const;
  std::size_t stream_a_width() const noexcept { return 2 * stream_a.filters; }
  std::size_t stream_b_width() const noexcept { return stream_b.separable_filters; }
  std::size_t stream_c_width() const noexcept {
    return stream_c.combine == layers::Combine::sum ? stream_c.lstm_hidden : 2 * stream_c.lstm_hidden;
  }
};

/// Which components take part in the network.
struct AblationFlags {
  bool stream_a = true;
  bool stream_b = true;
  bool stream_c = true;
  bool attention = true;

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

/// Width of the fused [A | B | C] feature vector for the enabled streams.
std::size_t fused_width(const ModelConfig& config, const AblationFlags& flags);

/// All constraint violations, empty when the configuration is usable.
std::vector<std::string> validate(const ModelConfig& config, const AblationFlags& flags);

/// Throws ConfigError listing every violation.
void require_valid(const ModelConfig& config, const AblationFlags& flags);

/// Parameters for the enabled components, initialized from `rng`. Names:
/// a.fwd.*, a.bwd.* (Bi-TCN); b.conv.*, b.sep.*, b.se.*; c.tcn.*, c.lstm.*;
/// attn.*; head.*.
ParamStore build(const ModelConfig& config, const AblationFlags& flags, Rng& rng);

/// Logits [K] for one window x [C,T] on the graph behind `p`.
/// `dropout_rng` is only drawn from in train mode.
ad::Var forward_sample(const ad::Binder& p, const ModelConfig& config, const AblationFlags& flags, ad::Var x,
                       layers::Mode mode, Rng& dropout_rng);

/// Logits [B,K] for a batch [B,C,T]. Samples are evaluated independently.
Tensor forward(const ParamStore& params, const ModelConfig& config, const AblationFlags& flags, const Tensor& batch,
               layers::Mode mode = layers::Mode::eval, std::uint64_t dropout_seed = 0);

// --- FLOPs ---------------------------------------------------------------------

/// Analytic operation count for one window; a multiply-add counts as 2.
struct FlopReport {
  struct Layer {
    std::string name;
    std::uint64_t flops = 0;
  };
  std::vector<Layer> layers;
  std::uint64_t total = 0;

  double mflops() const noexcept { return static_cast<double>(total) / 1e6; }
};

FlopReport count_flops(const ModelConfig& config, const AblationFlags& flags, std::size_t input_len);

// --- Checkpoints ---------------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  AblationFlags flags;
  ParamStore params;
};

/// TSW1 layout: "TSW1", u32 LE header length, UTF-8 JSON header
/// {format_version, config, parameters:[{name, shape}]}, then every parameter
/// as little-endian f64 in manifest order.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tristream
