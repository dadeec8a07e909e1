#include "tristream/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tristream/error.hpp"

namespace tristream {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(t.shape()));
  }
}

double apply_unary(Elementwise op, double x) noexcept {
  switch (op) {
    case Elementwise::relu:
      return x > 0.0 ? x : 0.0;
    case Elementwise::sigmoid:
      return sigmoid(x);
    case Elementwise::tanh:
      return std::tanh(x);
    default:
      return x;
  }
}

double apply_binary(Elementwise op, double a, double b) noexcept {
  switch (op) {
    case Elementwise::add:
      return a + b;
    case Elementwise::sub:
      return a - b;
    case Elementwise::mul:
      return a * b;
    default:
      return a;
  }
}

// Shared inner loop of the causal/anticausal convolutions. `sign` is +1 for
// anticausal (reads x[t + d*k]) and -1 for causal (reads x[t - d*k]). Both
// accumulate bias first, then input channels in order, then taps in order,
// so the two directions agree bitwise under time reversal.
Tensor conv1d_impl(const Tensor& x, const Conv1dKernel& k, bool causal) {
  k.validate();
  require_rank(x, 2, causal ? "conv1d_causal" : "conv1d_anticausal");
  const std::size_t cin = x.dim(0), T = x.dim(1);
  if (cin != k.in_channels()) {
    throw ShapeError(std::string(causal ? "conv1d_causal" : "conv1d_anticausal") + ": input " +
                     shape_str(x.shape()) + " has " + std::to_string(cin) + " channels, kernel " +
                     shape_str(k.weights.shape()) + " expects " + std::to_string(k.in_channels()));
  }
  const std::size_t cout = k.out_channels(), K = k.kernel_size(), d = k.dilation;
  Tensor y({cout, T});
  if (T == 0) return y;
  // Zero-padded copy so every tap reads in bounds: (K-1)*d leading zeros for
  // causal, trailing for anticausal.
  const std::size_t pad = (K - 1) * d, TP = T + pad;
  std::vector<double> xp(cin * TP, 0.0);
  for (std::size_t c = 0; c < cin; ++c) {
    const auto row = x.row(c);
    std::copy(row.begin(), row.end(), xp.begin() + static_cast<std::ptrdiff_t>(c * TP + (causal ? pad : 0)));
  }
  constexpr std::size_t B = 32;
  const double* w = k.weights.data().data();
  for (std::size_t o = 0; o < cout; ++o) {
    double* yo = y.row(o).data();
    const double* wo = w + o * cin * K;
    for (std::size_t t0 = 0; t0 < T; t0 += B) {
      const std::size_t n = std::min(B, T - t0);
      double acc[B];
      for (std::size_t i = 0; i < B; ++i) acc[i] = k.bias[o];
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xc = xp.data() + c * TP;
        for (std::size_t j = 0; j < K; ++j) {
          const double wv = wo[c * K + j];
          const double* src = causal ? xc + t0 + pad - j * d : xc + t0 + j * d;
          if (n == B) {
            for (std::size_t i = 0; i < B; ++i) acc[i] += wv * src[i];
          } else {
            for (std::size_t i = 0; i < n; ++i) acc[i] += wv * src[i];
          }
        }
      }
      std::copy(acc, acc + n, yo + t0);
    }
  }
  return y;
}

}  // namespace

const char* to_string(Elementwise op) noexcept {
  switch (op) {
    case Elementwise::add:
      return "add";
    case Elementwise::sub:
      return "sub";
    case Elementwise::mul:
      return "mul";
    case Elementwise::relu:
      return "relu";
    case Elementwise::sigmoid:
      return "sigmoid";
    case Elementwise::tanh:
      return "tanh";
  }
  return "?";
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor* b) {
  const bool binary = op == Elementwise::add || op == Elementwise::sub || op == Elementwise::mul;
  if (!binary) {
    Tensor out = a;
    for (double& v : out.data()) v = apply_unary(op, v);
    return out;
  }
  if (b == nullptr) throw ShapeError(std::string(to_string(op)) + " needs two operands");
  if (a.shape() == b->shape()) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply_binary(op, a[i], (*b)[i]);
    return out;
  }
  if (b->rank() == 0) {
    Tensor out(a.shape());
    const double s = b->item();
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply_binary(op, a[i], s);
    return out;
  }
  if (a.rank() == 0) {
    Tensor out(b->shape());
    const double s = a.item();
    for (std::size_t i = 0; i < b->size(); ++i) out[i] = apply_binary(op, s, (*b)[i]);
    return out;
  }
  throw ShapeError(std::string(to_string(op)) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                   shape_str(b->shape()));
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::add, a, &b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::sub, a, &b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::mul, a, &b); }
Tensor relu(const Tensor& x) { return elementwise(Elementwise::relu, x); }
Tensor sigmoid(const Tensor& x) { return elementwise(Elementwise::sigmoid, x); }
Tensor tanh(const Tensor& x) { return elementwise(Elementwise::tanh, x); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* oi = out.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.at(i, p);
      const double* bp = b.row(p).data();
      for (std::size_t j = 0; j < n; ++j) oi[j] += aip * bp[j];
    }
  }
  return out;
}

void Conv1dKernel::validate() const {
  if (weights.rank() != 3) throw ShapeError("conv kernel weights must be [out, in, K], got " + shape_str(weights.shape()));
  if (weights.dim(2) < 1) throw ConfigError("conv kernel size must be >= 1");
  if (dilation < 1) throw ConfigError("conv dilation must be >= 1");
  if (bias.rank() != 1 || bias.dim(0) != weights.dim(0)) {
    throw ShapeError("conv bias " + shape_str(bias.shape()) + " does not match weights " + shape_str(weights.shape()));
  }
}

Tensor conv1d_causal(const Tensor& x, const Conv1dKernel& k) { return conv1d_impl(x, k, true); }

Tensor conv1d_anticausal(const Tensor& x, const Conv1dKernel& k) { return conv1d_impl(x, k, false); }

Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernels, std::size_t dilation) {
  require_rank(x, 2, "depthwise_conv1d");
  require_rank(kernels, 2, "depthwise_conv1d kernels");
  if (dilation < 1) throw ConfigError("depthwise_conv1d: dilation must be >= 1");
  const std::size_t C = x.dim(0), T = x.dim(1), K = kernels.dim(1);
  if (kernels.dim(0) != C) {
    throw ShapeError("depthwise_conv1d: input " + shape_str(x.shape()) + " vs kernels " +
                     shape_str(kernels.shape()));
  }
  Tensor y({C, T});
  for (std::size_t c = 0; c < C; ++c) {
    const double* xc = x.row(c).data();
    double* yc = y.row(c).data();
    for (std::size_t j = 0; j < K; ++j) {
      const double w = kernels.at(c, j);
      const std::size_t shift = dilation * j;
      for (std::size_t t = shift; t < T; ++t) yc[t] += w * xc[t - shift];
    }
  }
  return y;
}

Tensor pointwise_conv1d(const Tensor& x, const Tensor& k) {
  require_rank(x, 2, "pointwise_conv1d");
  require_rank(k, 2, "pointwise_conv1d mixing matrix");
  if (k.dim(1) != x.dim(0)) {
    throw ShapeError("pointwise_conv1d: mixing matrix " + shape_str(k.shape()) + " vs input " +
                     shape_str(x.shape()));
  }
  return matmul(k, x);
}

Tensor avg_pool_time(const Tensor& x) {
  require_rank(x, 2, "avg_pool_time");
  const std::size_t C = x.dim(0), T = x.dim(1);
  if (T == 0) throw ShapeError("avg_pool_time: empty time axis");
  Tensor out({C});
  const double inv = 1.0 / static_cast<double>(T);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (double v : x.row(c)) s += v;
    out[c] = s * inv;
  }
  return out;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no parts");
  const std::size_t rank = parts[0].rank();
  if (rank != 1 && rank != 2) throw ShapeError("concat_channels: parts must be [C] or [C,T]");
  std::size_t channels = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank || (rank == 2 && p.dim(1) != parts[0].dim(1))) {
      throw ShapeError("concat_channels: part " + shape_str(p.shape()) + " incompatible with " +
                       shape_str(parts[0].shape()));
    }
    channels += p.dim(0);
  }
  Shape shape = parts[0].shape();
  shape[0] = channels;
  std::vector<double> data;
  data.reserve(shape_size(shape));
  for (const Tensor& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor(std::move(shape), std::move(data));
}

std::vector<Tensor> split_channels(const Tensor& x, std::span<const std::size_t> extents) {
  std::size_t total = 0;
  for (std::size_t e : extents) total += e;
  if (x.rank() < 1 || total != x.dim(0)) {
    throw ShapeError("split_channels: extents do not sum to channel count of " + shape_str(x.shape()));
  }
  const std::size_t stride = x.dim(0) ? x.size() / x.dim(0) : 0;
  std::vector<Tensor> parts;
  std::size_t offset = 0;
  for (std::size_t e : extents) {
    Shape s = x.shape();
    s[0] = e;
    auto first = x.data().begin() + static_cast<std::ptrdiff_t>(offset * stride);
    parts.emplace_back(std::move(s), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(e * stride)));
    offset += e;
  }
  return parts;
}

double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 1, "softmax");
  if (logits.size() == 0) throw ShapeError("softmax: empty input");
  double m = logits[0];
  for (double v : logits.data()) m = std::max(m, v);
  Tensor out(logits.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    s += out[i];
  }
  for (double& v : out.data()) v /= s;
  return out;
}

Tensor reverse_time(const Tensor& x) {
  require_rank(x, 2, "reverse_time");
  const std::size_t C = x.dim(0), T = x.dim(1);
  Tensor out({C, T});
  for (std::size_t c = 0; c < C; ++c) {
    const auto src = x.row(c);
    std::reverse_copy(src.begin(), src.end(), out.row(c).begin());
  }
  return out;
}

}  // namespace tristream
