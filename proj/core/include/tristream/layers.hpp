#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "tristream/autodiff.hpp"
#include "tristream/params.hpp"
#include "tristream/rng.hpp"
#include "tristream/tensor.hpp"

/// Building blocks of the three-stream network.
///
/// Each block has a spec (hyperparameters), an `init_*` function that
/// registers its parameters under a name prefix, and a forward function that
/// reads them back through an ad::Binder. Parameter names are
/// `<prefix>.<local name>`.
namespace tristream::layers {

using ad::Binder;
using ad::Var;

enum class Gate { sigmoid, relu };
enum class Combine { sum, concat };

const char* to_string(Gate g) noexcept;
const char* to_string(Combine c) noexcept;

/// U(-sqrt(6/fan_in), sqrt(6/fan_in)).
Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng);

/// Runs `f` on an inference-only graph and returns the value.
Tensor evaluate(const ParamStore& params, const std::function<Var(Binder&)>& f);

// --- TCN -------------------------------------------------------------------

struct TcnBlockSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_size = 3;
  std::size_t dilation = 1;

  bool has_projection() const noexcept { return in_channels != out_channels; }
  /// Extra past samples seen by the block: two convs of (K-1)*d each.
  std::size_t receptive_growth() const noexcept { return 2 * (kernel_size - 1) * dilation; }
  void validate() const;
};

/// Parameters: conv1.{weight,bias}, conv2.{weight,bias}, and
/// proj.{weight,bias} (1x1) when the channel counts differ.
void init_tcn_block(ParamStore& store, const std::string& prefix, const TcnBlockSpec& spec, Rng& rng);

/// relu(residual(x) + conv2(relu(conv1(x)))), all convs causal.
Var tcn_block(const Binder& p, const std::string& prefix, const TcnBlockSpec& spec, Var x);

struct TcnStackSpec {
  std::size_t in_channels = 1;
  std::size_t filters = 32;
  std::size_t kernel_size = 3;
  std::vector<std::size_t> dilations{1};

  std::vector<TcnBlockSpec> blocks() const;
  /// 1 + sum over blocks of 2*(K-1)*d.
  std::size_t receptive_field() const;
  void validate() const;
};

void init_tcn_stack(ParamStore& store, const std::string& prefix, const TcnStackSpec& spec, Rng& rng);
Var tcn_stack(const Binder& p, const std::string& prefix, const TcnStackSpec& spec, Var x);

/// Two independently parameterized stacks under `<prefix>.fwd` and
/// `<prefix>.bwd`. Output channels [0,F) are the causal stack on x, [F,2F)
/// the same architecture run on reverse_time(x) and reversed back.
void init_bitcn(ParamStore& store, const std::string& prefix, const TcnStackSpec& spec, Rng& rng);
Var bitcn(const Binder& p, const std::string& prefix, const TcnStackSpec& spec, Var x);

// --- Separable convolution ---------------------------------------------------

struct SeparableSpec {
  std::size_t channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_size = 3;
  std::size_t dilation = 1;

  /// C*K + C_out*C
  std::size_t param_count() const noexcept { return channels * kernel_size + out_channels * channels; }
  /// C_out*C*K for a dense convolution of the same shape.
  std::size_t full_conv_param_count() const noexcept { return out_channels * channels * kernel_size; }
  void validate() const;
};

/// Parameters: depthwise [C,K], pointwise [C_out,C].
void init_separable(ParamStore& store, const std::string& prefix, const SeparableSpec& spec, Rng& rng);
/// relu(pointwise(depthwise(x)))
Var separable_stack(const Binder& p, const std::string& prefix, const SeparableSpec& spec, Var x);

// --- Squeeze-and-excitation --------------------------------------------------

struct SeSpec {
  std::size_t channels = 1;
  std::size_t ratio = 4;
  Gate gate = Gate::sigmoid;

  std::size_t reduced() const noexcept { return channels / ratio; }
  /// Throws ConfigError unless channels % ratio == 0 and ratio <= channels.
  void validate() const;
};

/// Parameters: reduce [C/r, C], expand [C, C/r] (no biases).
void init_se(ParamStore& store, const std::string& prefix, const SeSpec& spec, Rng& rng);

/// Squeeze z = mean_t(I), excite s = gate(expand * relu(reduce * z)), then
/// rescale channel c of I by s[c].
Var se_block(const Binder& p, const std::string& prefix, const SeSpec& spec, Var input);

// --- LSTM --------------------------------------------------------------------

struct LstmSpec {
  std::size_t input_size = 1;
  std::size_t hidden_size = 32;

  void validate() const;
};

/// Parameters: w_input [4H,In], w_hidden [4H,H], bias [4H] with gate blocks
/// ordered input, forget, candidate, output. Weights U(-1/sqrt(H), 1/sqrt(H)),
/// forget bias 1, other biases 0.
void init_lstm(ParamStore& store, const std::string& prefix, const LstmSpec& spec, Rng& rng);

ad::LstmState lstm_cell(const Binder& p, const std::string& prefix, Var x, Var h_prev, Var c_prev);

/// Forward scan over [In,T] from a zero state -> [H,T].
Var lstm_forward_scan(const Binder& p, const std::string& prefix, Var seq);

/// Parameters under `<prefix>.fwd` and `<prefix>.bwd`. Backward branch is
/// reverse_time(scan_bwd(reverse_time(seq))). Output [H,T] for sum, [2H,T]
/// for concat.
void init_bilstm(ParamStore& store, const std::string& prefix, const LstmSpec& spec, Rng& rng);
Var bilstm(const Binder& p, const std::string& prefix, Var seq, Combine combine);

// --- Dense, dropout, channel attention ---------------------------------------

struct DenseSpec {
  std::size_t in = 1;
  std::size_t out = 1;
};

/// Parameters: weight [out,in] ~ U(-sqrt(3/in), sqrt(3/in)), bias [out] = 0.
void init_dense(ParamStore& store, const std::string& prefix, const DenseSpec& spec, Rng& rng);
Var dense(const Binder& p, const std::string& prefix, Var x);

enum class Mode { train, eval };

Var dropout(Var x, double rate, Mode mode, Rng& rng);

struct AttentionSpec {
  std::size_t channels = 1;
  std::size_t ratio = 4;

  void validate() const;
};

/// Parameters: reduce [C/r, C], expand [C, C/r].
void init_channel_attention(ParamStore& store, const std::string& prefix, const AttentionSpec& spec, Rng& rng);
/// f * sigmoid(expand * relu(reduce * f))
Var channel_attention(const Binder& p, const std::string& prefix, Var fused);

}  // namespace tristream::layers
