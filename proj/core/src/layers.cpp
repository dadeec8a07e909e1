#include "tristream/layers.hpp"

#include <cmath>

#include "tristream/error.hpp"

namespace tristream::layers {

namespace {

std::string join(const std::string& prefix, const char* local) { return prefix + "." + local; }

void require_positive(std::size_t v, const char* what) {
  if (v == 0) throw ConfigError(std::string(what) + " must be positive");
}

Tensor uniform(Shape shape, double limit, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

void check_ratio(std::size_t channels, std::size_t ratio, const char* what) {
  require_positive(channels, what);
  require_positive(ratio, "reduction ratio");
  if (channels % ratio != 0 || ratio > channels) {
    throw ConfigError(std::string(what) + ": " + std::to_string(channels) + " channels not divisible by ratio " +
                      std::to_string(ratio));
  }
}

// Excitation weights gate(expand * relu(reduce * z)) for a [C] vector.
Var excite(const Binder& p, const std::string& prefix, Var z, Gate gate) {
  const std::size_t c = z.value().size();
  Var hidden = ad::relu(ad::matmul(p(join(prefix, "reduce")), ad::reshape(z, {c, 1})));
  Var pre = ad::matmul(p(join(prefix, "expand")), hidden);
  return ad::reshape(gate == Gate::sigmoid ? ad::sigmoid(pre) : ad::relu(pre), {c});
}

}  // namespace

const char* to_string(Gate g) noexcept { return g == Gate::sigmoid ? "sigmoid" : "relu"; }
const char* to_string(Combine c) noexcept { return c == Combine::sum ? "sum" : "concat"; }

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  return uniform(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

Tensor evaluate(const ParamStore& params, const std::function<Var(Binder&)>& f) {
  ad::Graph g(false);
  Binder bind(g, params);
  return f(bind).value();
}

// --- TCN -------------------------------------------------------------------

void TcnBlockSpec::validate() const {
  require_positive(in_channels, "tcn in_channels");
  require_positive(out_channels, "tcn out_channels");
  require_positive(kernel_size, "tcn kernel_size");
  require_positive(dilation, "tcn dilation");
}

void init_tcn_block(ParamStore& store, const std::string& prefix, const TcnBlockSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t K = spec.kernel_size;
  store.add(join(prefix, "conv1.weight"), he_uniform({spec.out_channels, spec.in_channels, K}, spec.in_channels * K, rng));
  store.add(join(prefix, "conv1.bias"), Tensor({spec.out_channels}));
  store.add(join(prefix, "conv2.weight"),
            he_uniform({spec.out_channels, spec.out_channels, K}, spec.out_channels * K, rng));
  store.add(join(prefix, "conv2.bias"), Tensor({spec.out_channels}));
  if (spec.has_projection()) {
    store.add(join(prefix, "proj.weight"), he_uniform({spec.out_channels, spec.in_channels, 1}, spec.in_channels, rng));
    store.add(join(prefix, "proj.bias"), Tensor({spec.out_channels}));
  }
}

Var tcn_block(const Binder& p, const std::string& prefix, const TcnBlockSpec& spec, Var x) {
  if (x.value().rank() != 2 || x.value().dim(0) != spec.in_channels) {
    throw ShapeError("tcn_block " + prefix + ": input " + shape_str(x.value().shape()) + " expects " +
                     std::to_string(spec.in_channels) + " channels");
  }
  if (x.value().dim(1) == 0) throw ShapeError("tcn_block " + prefix + ": empty time axis");
  Var h = ad::relu(ad::conv1d_causal(x, p(join(prefix, "conv1.weight")), p(join(prefix, "conv1.bias")), spec.dilation));
  Var f = ad::conv1d_causal(h, p(join(prefix, "conv2.weight")), p(join(prefix, "conv2.bias")), spec.dilation);
  Var residual = spec.has_projection()
                     ? ad::conv1d_causal(x, p(join(prefix, "proj.weight")), p(join(prefix, "proj.bias")), 1)
                     : x;
  return ad::relu(ad::add(residual, f));
}

std::vector<TcnBlockSpec> TcnStackSpec::blocks() const {
  std::vector<TcnBlockSpec> out;
  std::size_t in = in_channels;
  for (std::size_t d : dilations) {
    out.push_back({in, filters, kernel_size, d});
    in = filters;
  }
  return out;
}

std::size_t TcnStackSpec::receptive_field() const {
  std::size_t rf = 1;
  for (const auto& b : blocks()) rf += b.receptive_growth();
  return rf;
}

void TcnStackSpec::validate() const {
  if (dilations.empty()) throw ConfigError("tcn stack needs at least one block");
  for (const auto& b : blocks()) b.validate();
}

void init_tcn_stack(ParamStore& store, const std::string& prefix, const TcnStackSpec& spec, Rng& rng) {
  spec.validate();
  const auto blocks = spec.blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    init_tcn_block(store, prefix + ".block" + std::to_string(i), blocks[i], rng);
  }
}

Var tcn_stack(const Binder& p, const std::string& prefix, const TcnStackSpec& spec, Var x) {
  const auto blocks = spec.blocks();
  if (blocks.empty()) throw ConfigError("tcn stack needs at least one block");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    x = tcn_block(p, prefix + ".block" + std::to_string(i), blocks[i], x);
  }
  return x;
}

void init_bitcn(ParamStore& store, const std::string& prefix, const TcnStackSpec& spec, Rng& rng) {
  init_tcn_stack(store, prefix + ".fwd", spec, rng);
  init_tcn_stack(store, prefix + ".bwd", spec, rng);
}

Var bitcn(const Binder& p, const std::string& prefix, const TcnStackSpec& spec, Var x) {
  Var fwd = tcn_stack(p, prefix + ".fwd", spec, x);
  Var bwd = ad::reverse_time(tcn_stack(p, prefix + ".bwd", spec, ad::reverse_time(x)));
  const Var parts[] = {fwd, bwd};
  return ad::concat_channels(parts);
}

// --- Separable ---------------------------------------------------------------

void SeparableSpec::validate() const {
  require_positive(channels, "separable channels");
  require_positive(out_channels, "separable out_channels");
  require_positive(kernel_size, "separable kernel_size");
  require_positive(dilation, "separable dilation");
}

void init_separable(ParamStore& store, const std::string& prefix, const SeparableSpec& spec, Rng& rng) {
  spec.validate();
  store.add(join(prefix, "depthwise"), he_uniform({spec.channels, spec.kernel_size}, spec.kernel_size, rng));
  store.add(join(prefix, "pointwise"), he_uniform({spec.out_channels, spec.channels}, spec.channels, rng));
}

Var separable_stack(const Binder& p, const std::string& prefix, const SeparableSpec& spec, Var x) {
  Var depth = ad::depthwise_conv1d(x, p(join(prefix, "depthwise")), spec.dilation);
  return ad::relu(ad::pointwise_conv1d(depth, p(join(prefix, "pointwise"))));
}

// --- SE ----------------------------------------------------------------------

void SeSpec::validate() const { check_ratio(channels, ratio, "se block"); }

void init_se(ParamStore& store, const std::string& prefix, const SeSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t r = spec.reduced();
  store.add(join(prefix, "reduce"), he_uniform({r, spec.channels}, spec.channels, rng));
  store.add(join(prefix, "expand"), he_uniform({spec.channels, r}, r, rng));
}

Var se_block(const Binder& p, const std::string& prefix, const SeSpec& spec, Var input) {
  spec.validate();
  if (input.value().rank() != 2 || input.value().dim(0) != spec.channels) {
    throw ShapeError("se_block " + prefix + ": input " + shape_str(input.value().shape()) + " expects " +
                     std::to_string(spec.channels) + " channels");
  }
  Var z = ad::avg_pool_time(input);
  Var s = excite(p, prefix, z, spec.gate);
  return ad::scale_channels(input, s);
}

// --- LSTM --------------------------------------------------------------------

void LstmSpec::validate() const {
  require_positive(input_size, "lstm input_size");
  require_positive(hidden_size, "lstm hidden_size");
}

void init_lstm(ParamStore& store, const std::string& prefix, const LstmSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t H = spec.hidden_size;
  const double limit = 1.0 / std::sqrt(static_cast<double>(H));
  store.add(join(prefix, "w_input"), uniform({4 * H, spec.input_size}, limit, rng));
  store.add(join(prefix, "w_hidden"), uniform({4 * H, H}, limit, rng));
  Tensor bias({4 * H});
  for (std::size_t j = H; j < 2 * H; ++j) bias[j] = 1.0;
  store.add(join(prefix, "bias"), std::move(bias));
}

ad::LstmState lstm_cell(const Binder& p, const std::string& prefix, Var x, Var h_prev, Var c_prev) {
  return ad::lstm_cell(x, h_prev, c_prev, p(join(prefix, "w_input")), p(join(prefix, "w_hidden")),
                       p(join(prefix, "bias")));
}

Var lstm_forward_scan(const Binder& p, const std::string& prefix, Var seq) {
  return ad::lstm_scan(seq, p(join(prefix, "w_input")), p(join(prefix, "w_hidden")), p(join(prefix, "bias")));
}

void init_bilstm(ParamStore& store, const std::string& prefix, const LstmSpec& spec, Rng& rng) {
  init_lstm(store, prefix + ".fwd", spec, rng);
  init_lstm(store, prefix + ".bwd", spec, rng);
}

Var bilstm(const Binder& p, const std::string& prefix, Var seq, Combine combine) {
  Var fwd = lstm_forward_scan(p, prefix + ".fwd", seq);
  Var bwd = ad::reverse_time(lstm_forward_scan(p, prefix + ".bwd", ad::reverse_time(seq)));
  if (combine == Combine::sum) {
    if (fwd.value().shape() != bwd.value().shape()) {
      throw ShapeError("bilstm " + prefix + ": sum needs equal hidden sizes, got " + shape_str(fwd.value().shape()) +
                       " and " + shape_str(bwd.value().shape()));
    }
    return ad::add(fwd, bwd);
  }
  const Var parts[] = {fwd, bwd};
  return ad::concat_channels(parts);
}

// --- Dense / dropout / attention ---------------------------------------------

void init_dense(ParamStore& store, const std::string& prefix, const DenseSpec& spec, Rng& rng) {
  require_positive(spec.in, "dense in");
  require_positive(spec.out, "dense out");
  const double limit = std::sqrt(3.0 / static_cast<double>(spec.in));
  store.add(join(prefix, "weight"), uniform({spec.out, spec.in}, limit, rng));
  store.add(join(prefix, "bias"), Tensor({spec.out}));
}

Var dense(const Binder& p, const std::string& prefix, Var x) {
  return ad::dense(x, p(join(prefix, "weight")), p(join(prefix, "bias")));
}

Var dropout(Var x, double rate, Mode mode, Rng& rng) { return ad::dropout(x, rate, mode == Mode::train, rng); }

void AttentionSpec::validate() const { check_ratio(channels, ratio, "channel attention"); }

void init_channel_attention(ParamStore& store, const std::string& prefix, const AttentionSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t r = spec.channels / spec.ratio;
  store.add(join(prefix, "reduce"), he_uniform({r, spec.channels}, spec.channels, rng));
  store.add(join(prefix, "expand"), he_uniform({spec.channels, r}, r, rng));
}

Var channel_attention(const Binder& p, const std::string& prefix, Var fused) {
  if (fused.value().rank() != 1) {
    throw ShapeError("channel_attention " + prefix + ": expects a [C] vector, got " + shape_str(fused.value().shape()));
  }
  Var s = excite(p, prefix, fused, Gate::sigmoid);
  return ad::scale_channels(fused, s);
}

}  // namespace tristream::layers
