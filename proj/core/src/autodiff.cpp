#include "tristream/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "kernels.hpp"
#include "tristream/error.hpp"
#include "tristream/ops.hpp"

namespace tristream::ad {

namespace {

struct FaultState {
  std::mutex mu;
  std::string op;
  double scale = 1.0;
};

FaultState& fault_state() {
  static FaultState state;
  return state;
}

void require_same_graph(Var a, Var b, const char* op) {
  if (&a.graph() != &b.graph()) throw Error(std::string(op) + ": operands belong to different graphs");
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

const Tensor& Var::value() const { return graph_->value(id_); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{"constant", {}, std::move(value), {}, {}, {}});
  return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(const std::string& name, const Tensor& value) {
  if (auto it = params_.find(name); it != params_.end()) return Var(this, it->second);
  nodes_.push_back(Node{"parameter", {}, value, {}, {}, name});
  params_.emplace(name, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(std::string op, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  if (!value.all_finite()) throw NumericError("non-finite activation produced by op '" + op + "'");
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  if (record_) {
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) n.inputs.push_back(v.id());
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

std::vector<std::size_t> Graph::topological_order(std::size_t root) const {
  std::vector<std::size_t> order;
  std::vector<char> state(nodes_.size(), 0);  // 0 new, 1 open, 2 done
  std::vector<std::pair<std::size_t, std::size_t>> stack{{root, 0}};
  state[root] = 1;
  while (!stack.empty()) {
    auto& [id, next] = stack.back();
    const auto& inputs = nodes_[id].inputs;
    if (next < inputs.size()) {
      const std::size_t child = inputs[next++];
      if (state[child] == 0) {
        state[child] = 1;
        stack.emplace_back(child, 0);
      }
    } else {
      state[id] = 2;
      order.push_back(id);
      stack.pop_back();
    }
  }
  return order;
}

std::map<std::string, Tensor> Graph::backward(Var loss) {
  if (!record_) throw Error("backward: graph was built without recording");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.value().shape()));
  }
  std::string fault_op;
  double fault_scale = 1.0;
  {
    auto& fs = fault_state();
    std::lock_guard lock(fs.mu);
    fault_op = fs.op;
    fault_scale = fs.scale;
  }

  const auto order = topological_order(loss.id());
  grad(loss.id()).fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = nodes_[*it];
    if (!n.backward || n.grad.empty()) continue;
    if (!fault_op.empty() && n.op == fault_op) {
      for (double& g : n.grad.data()) g *= fault_scale;
    }
    n.backward(*this, *it);
    for (std::size_t in : nodes_[*it].inputs) {
      const Tensor& g = nodes_[in].grad;
      if (!g.empty() && !g.all_finite()) {
        throw NumericError("non-finite gradient produced by op '" + nodes_[*it].op + "'");
      }
    }
  }

  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[id];
    out.emplace(name, n.grad.empty() ? Tensor(n.value.shape()) : n.grad);
  }
  return out;
}

namespace debug {

ScopedBackwardFault::ScopedBackwardFault(std::string op, double scale) {
  auto& fs = fault_state();
  std::lock_guard lock(fs.mu);
  fs.op = std::move(op);
  fs.scale = scale;
}

ScopedBackwardFault::~ScopedBackwardFault() {
  auto& fs = fault_state();
  std::lock_guard lock(fs.mu);
  fs.op.clear();
  fs.scale = 1.0;
}

}  // namespace debug

// ---------------------------------------------------------------------------
// Elementwise

namespace {

Var binary(Elementwise op, Var a, Var b) {
  require_same_graph(a, b, to_string(op));
  Graph& g = a.graph();
  Tensor value = elementwise(op, a.value(), &b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(to_string(op), {a, b}, std::move(value), [op, ia, ib](Graph& g, std::size_t self) {
    const Tensor& gy = g.node(self).grad;
    const Tensor& va = g.value(ia);
    const Tensor& vb = g.value(ib);
    const bool a_scalar = va.rank() == 0 && vb.rank() != 0;
    const bool b_scalar = vb.rank() == 0 && va.rank() != 0;
    Tensor& ga = g.grad(ia);
    Tensor& gb = g.grad(ib);
    for (std::size_t i = 0; i < gy.size(); ++i) {
      const double x = a_scalar ? va[0] : va[i];
      const double y = b_scalar ? vb[0] : vb[i];
      double da = gy[i], db = gy[i];
      if (op == Elementwise::sub) db = -gy[i];
      if (op == Elementwise::mul) {
        da = gy[i] * y;
        db = gy[i] * x;
      }
      ga[a_scalar ? 0 : i] += da;
      gb[b_scalar ? 0 : i] += db;
    }
  });
}

}  // namespace

Var add(Var a, Var b) { return binary(Elementwise::add, a, b); }
Var sub(Var a, Var b) { return binary(Elementwise::sub, a, b); }
Var mul(Var a, Var b) { return binary(Elementwise::mul, a, b); }

Var relu(Var x) {
  Graph& g = x.graph();
  double margin = std::numeric_limits<double>::infinity();
  for (double v : x.value().data()) margin = std::min(margin, std::abs(v));
  g.note_kink_distance(margin);
  const std::size_t ix = x.id();
  return g.record("relu", {x}, tristream::relu(x.value()), [ix](Graph& g, std::size_t self) {
    const Tensor& gy = g.node(self).grad;
    const Tensor& vx = g.value(ix);
    Tensor& gx = g.grad(ix);
    // Subgradient at exactly 0 is 0.
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += vx[i] > 0.0 ? gy[i] : 0.0;
  });
}

Var sigmoid(Var x) {
  const std::size_t ix = x.id();
  return x.graph().record("sigmoid", {x}, tristream::sigmoid(x.value()), [ix](Graph& g, std::size_t self) {
    const Node& n = g.node(self);
    Tensor& gx = g.grad(ix);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const double s = n.value[i];
      gx[i] += n.grad[i] * s * (1.0 - s);
    }
  });
}

Var tanh(Var x) {
  const std::size_t ix = x.id();
  return x.graph().record("tanh", {x}, tristream::tanh(x.value()), [ix](Graph& g, std::size_t self) {
    const Node& n = g.node(self);
    Tensor& gx = g.grad(ix);
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const double t = n.value[i];
      gx[i] += n.grad[i] * (1.0 - t * t);
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t ix = x.id();
  return x.graph().record("sum", {x}, Tensor::scalar(s), [ix](Graph& g, std::size_t self) {
    const double gy = g.node(self).grad[0];
    for (double& v : g.grad(ix).data()) v += gy;
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and convolutions

Var matmul(Var a, Var b) {
  require_same_graph(a, b, "matmul");
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record("matmul", {a, b}, tristream::matmul(a.value(), b.value()),
                          [ia, ib](Graph& g, std::size_t self) {
                            const Tensor& gc = g.node(self).grad;
                            const Tensor& va = g.value(ia);
                            const Tensor& vb = g.value(ib);
                            const std::size_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
                            Tensor& ga = g.grad(ia);
                            Tensor& gb = g.grad(ib);
                            for (std::size_t i = 0; i < m; ++i) {
                              const double* gci = gc.row(i).data();
                              for (std::size_t p = 0; p < k; ++p) {
                                ga.at(i, p) += kernels::dot(gci, vb.row(p).data(), n);
                                kernels::axpy(va.at(i, p), gci, gb.row(p).data(), n);
                              }
                            }
                          });
}

namespace {

Var conv_var(Var x, Var w, Var b, std::size_t dilation, bool causal) {
  Conv1dKernel k{w.value(), b.value(), dilation};
  Tensor value = causal ? tristream::conv1d_causal(x.value(), k) : tristream::conv1d_anticausal(x.value(), k);
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  auto rule = [ix, iw, ib, dilation, causal](Graph& g, std::size_t self) {
    const Tensor& gy = g.node(self).grad;
    const Tensor& vx = g.value(ix);
    const Tensor& vw = g.value(iw);
    Tensor& gx = g.grad(ix);
    Tensor& gw = g.grad(iw);
    Tensor& gb = g.grad(ib);
    const std::size_t cout = vw.dim(0), cin = vw.dim(1), K = vw.dim(2), T = vx.dim(1);
    for (std::size_t o = 0; o < cout; ++o) {
      const double* gyo = gy.row(o).data();
      gb[o] += kernels::sum(gyo, T);
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xc = vx.row(c).data();
        for (std::size_t j = 0; j < K; ++j) {
          const std::size_t shift = dilation * j;
          if (shift >= T) continue;
          gw.at(o, c, j) += causal ? kernels::dot(gyo + shift, xc, T - shift) : kernels::dot(gyo, xc + shift, T - shift);
        }
      }
    }
    // dL/dx is the opposite-direction convolution of gy with the transposed kernel.
    Conv1dKernel back{Tensor({cin, cout, K}), Tensor({cin}), dilation};
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t j = 0; j < K; ++j) back.weights.at(c, o, j) = vw.at(o, c, j);
      }
    }
    const Tensor dx = causal ? tristream::conv1d_anticausal(gy, back) : tristream::conv1d_causal(gy, back);
    kernels::axpy(1.0, dx.data().data(), gx.data().data(), dx.size());
  };
  return x.graph().record(causal ? "conv1d_causal" : "conv1d_anticausal", {x, w, b}, std::move(value),
                          std::move(rule));
}

}  // namespace

Var conv1d_causal(Var x, Var weights, Var bias, std::size_t dilation) {
  return conv_var(x, weights, bias, dilation, true);
}

Var conv1d_anticausal(Var x, Var weights, Var bias, std::size_t dilation) {
  return conv_var(x, weights, bias, dilation, false);
}

Var depthwise_conv1d(Var x, Var kernels, std::size_t dilation) {
  const std::size_t ix = x.id(), ik = kernels.id();
  return x.graph().record(
      "depthwise_conv1d", {x, kernels}, tristream::depthwise_conv1d(x.value(), kernels.value(), dilation),
      [ix, ik, dilation](Graph& g, std::size_t self) {
        const Tensor& gy = g.node(self).grad;
        const Tensor& vx = g.value(ix);
        const Tensor& vk = g.value(ik);
        Tensor& gx = g.grad(ix);
        Tensor& gk = g.grad(ik);
        const std::size_t C = vx.dim(0), T = vx.dim(1), K = vk.dim(1);
        for (std::size_t c = 0; c < C; ++c) {
          const double* gyc = gy.row(c).data();
          const double* xc = vx.row(c).data();
          double* gxc = gx.row(c).data();
          for (std::size_t j = 0; j < K; ++j) {
            const std::size_t shift = dilation * j;
            const double w = vk.at(c, j);
            double acc = 0.0;
            for (std::size_t t = shift; t < T; ++t) {
              acc += gyc[t] * xc[t - shift];
              gxc[t - shift] += w * gyc[t];
            }
            gk.at(c, j) += acc;
          }
        }
      });
}

Var pointwise_conv1d(Var x, Var mixing) {
  const std::size_t ix = x.id(), ik = mixing.id();
  return x.graph().record("pointwise_conv1d", {x, mixing}, tristream::pointwise_conv1d(x.value(), mixing.value()),
                          [ix, ik](Graph& g, std::size_t self) {
                            const Tensor& gy = g.node(self).grad;
                            const Tensor& vx = g.value(ix);
                            const Tensor& vk = g.value(ik);
                            Tensor& gx = g.grad(ix);
                            Tensor& gk = g.grad(ik);
                            const std::size_t cout = vk.dim(0), cin = vk.dim(1), T = vx.dim(1);
                            for (std::size_t o = 0; o < cout; ++o) {
                              const double* gyo = gy.row(o).data();
                              for (std::size_t c = 0; c < cin; ++c) {
                                const double* xc = vx.row(c).data();
                                double* gxc = gx.row(c).data();
                                const double w = vk.at(o, c);
                                double acc = 0.0;
                                for (std::size_t t = 0; t < T; ++t) {
                                  acc += gyo[t] * xc[t];
                                  gxc[t] += w * gyo[t];
                                }
                                gk.at(o, c) += acc;
                              }
                            }
                          });
}

// ---------------------------------------------------------------------------
// Shape plumbing

Var avg_pool_time(Var x) {
  const std::size_t ix = x.id();
  return x.graph().record("avg_pool_time", {x}, tristream::avg_pool_time(x.value()),
                          [ix](Graph& g, std::size_t self) {
                            const Tensor& gy = g.node(self).grad;
                            Tensor& gx = g.grad(ix);
                            const std::size_t C = gx.dim(0), T = gx.dim(1);
                            const double inv = 1.0 / static_cast<double>(T);
                            for (std::size_t c = 0; c < C; ++c) {
                              const double v = gy[c] * inv;
                              for (double& e : gx.row(c)) e += v;
                            }
                          });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no parts");
  std::vector<Tensor> values;
  values.reserve(parts.size());
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    require_same_graph(parts[0], p, "concat_channels");
    values.push_back(p.value());
    ids.push_back(p.id());
  }
  Tensor value = tristream::concat_channels(values);
  return parts[0].graph().record("concat", std::vector<Var>(parts.begin(), parts.end()), std::move(value),
                                 [ids](Graph& g, std::size_t self) {
                                   const Tensor& gy = g.node(self).grad;
                                   std::size_t offset = 0;
                                   for (std::size_t id : ids) {
                                     Tensor& gp = g.grad(id);
                                     for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gy[offset + i];
                                     offset += gp.size();
                                   }
                                 });
}

Var slice_channels(Var x, std::size_t offset, std::size_t count) {
  const Tensor& vx = x.value();
  if (vx.rank() < 1 || offset + count > vx.dim(0)) {
    throw ShapeError("slice_channels: [" + std::to_string(offset) + ", " + std::to_string(offset + count) +
                     ") out of range for " + shape_str(vx.shape()));
  }
  const std::size_t stride = vx.dim(0) ? vx.size() / vx.dim(0) : 0;
  Shape shape = vx.shape();
  shape[0] = count;
  auto first = vx.data().begin() + static_cast<std::ptrdiff_t>(offset * stride);
  Tensor value(std::move(shape), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * stride)));
  const std::size_t ix = x.id(), start = offset * stride;
  return x.graph().record("slice", {x}, std::move(value), [ix, start](Graph& g, std::size_t self) {
    const Tensor& gy = g.node(self).grad;
    Tensor& gx = g.grad(ix);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[start + i] += gy[i];
  });
}

Var reverse_time(Var x) {
  const std::size_t ix = x.id();
  return x.graph().record("reverse_time", {x}, tristream::reverse_time(x.value()), [ix](Graph& g, std::size_t self) {
    add_into(g.grad(ix), tristream::reverse_time(g.node(self).grad));
  });
}

Var reshape(Var x, Shape shape) {
  const std::size_t ix = x.id();
  return x.graph().record("reshape", {x}, x.value().reshaped(std::move(shape)), [ix](Graph& g, std::size_t self) {
    const Tensor& gy = g.node(self).grad;
    Tensor& gx = g.grad(ix);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

Var scale_channels(Var x, Var scale) {
  require_same_graph(x, scale, "scale_channels");
  const Tensor& vx = x.value();
  const Tensor& vs = scale.value();
  if (vs.rank() != 1 || vx.rank() < 1 || vx.dim(0) != vs.dim(0)) {
    throw ShapeError("scale_channels: input " + shape_str(vx.shape()) + " vs scale " + shape_str(vs.shape()));
  }
  const std::size_t C = vx.dim(0), T = vx.size() / C;
  Tensor value = vx;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) value[c * T + t] *= vs[c];
  }
  const std::size_t ix = x.id(), is = scale.id();
  return x.graph().record("scale_channels", {x, scale}, std::move(value), [ix, is, C, T](Graph& g, std::size_t self) {
    const Tensor& gy = g.node(self).grad;
    const Tensor& vx = g.value(ix);
    const Tensor& vs = g.value(is);
    Tensor& gx = g.grad(ix);
    Tensor& gs = g.grad(is);
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        acc += gy[c * T + t] * vx[c * T + t];
        gx[c * T + t] += gy[c * T + t] * vs[c];
      }
      gs[c] += acc;
    }
  });
}

Var dense(Var x, Var weights, Var bias) {
  const Tensor& vx = x.value();
  const Tensor& vw = weights.value();
  const Tensor& vb = bias.value();
  if (vx.rank() != 1 || vw.rank() != 2 || vb.rank() != 1 || vw.dim(1) != vx.dim(0) || vb.dim(0) != vw.dim(0)) {
    throw ShapeError("dense: x " + shape_str(vx.shape()) + ", W " + shape_str(vw.shape()) + ", b " +
                     shape_str(vb.shape()));
  }
  const std::size_t out = vw.dim(0), in = vw.dim(1);
  Tensor value = vb;
  for (std::size_t o = 0; o < out; ++o) {
    const double* wo = vw.row(o).data();
    double acc = 0.0;
    for (std::size_t i = 0; i < in; ++i) acc += wo[i] * vx[i];
    value[o] += acc;
  }
  const std::size_t ix = x.id(), iw = weights.id(), ib = bias.id();
  return x.graph().record("dense", {x, weights, bias}, std::move(value), [ix, iw, ib](Graph& g, std::size_t self) {
    const Tensor& gy = g.node(self).grad;
    const Tensor& vx = g.value(ix);
    const Tensor& vw = g.value(iw);
    Tensor& gx = g.grad(ix);
    Tensor& gw = g.grad(iw);
    Tensor& gb = g.grad(ib);
    const std::size_t out = vw.dim(0), in = vw.dim(1);
    for (std::size_t o = 0; o < out; ++o) {
      const double go = gy[o];
      gb[o] += go;
      const double* wo = vw.row(o).data();
      double* gwo = gw.row(o).data();
      for (std::size_t i = 0; i < in; ++i) {
        gwo[i] += go * vx[i];
        gx[i] += go * wo[i];
      }
    }
  });
}

Var dropout(Var x, double rate, bool train, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  if (!train || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(x.value().shape());
  for (double& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor value = tristream::mul(x.value(), mask);
  const std::size_t ix = x.id();
  return x.graph().record("dropout", {x}, std::move(value),
                          [ix, mask = std::move(mask)](Graph& g, std::size_t self) {
                            const Tensor& gy = g.node(self).grad;
                            Tensor& gx = g.grad(ix);
                            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * mask[i];
                          });
}

// ---------------------------------------------------------------------------
// LSTM

namespace {

void check_lstm_shapes(const Tensor& x_or_seq, std::size_t in, const Tensor& wx, const Tensor& wh, const Tensor& b,
                       const char* op) {
  if (wx.rank() != 2 || wh.rank() != 2 || b.rank() != 1) throw ShapeError(std::string(op) + ": bad weight ranks");
  const std::size_t H = wh.dim(1);
  if (H == 0 || wx.dim(0) != 4 * H || wh.dim(0) != 4 * H || b.dim(0) != 4 * H || wx.dim(1) != in) {
    throw ShapeError(std::string(op) + ": input " + shape_str(x_or_seq.shape()) + ", W_input " +
                     shape_str(wx.shape()) + ", W_hidden " + shape_str(wh.shape()) + ", bias " +
                     shape_str(b.shape()));
  }
}

// Gate pre-activations z [4H] -> activations in place (i, f, g, o blocks).
void activate_gates(double* z, std::size_t H) {
  for (std::size_t r = 0; r < H; ++r) z[r] = tristream::sigmoid(z[r]);
  for (std::size_t r = H; r < 2 * H; ++r) z[r] = tristream::sigmoid(z[r]);
  for (std::size_t r = 2 * H; r < 3 * H; ++r) z[r] = std::tanh(z[r]);
  for (std::size_t r = 3 * H; r < 4 * H; ++r) z[r] = tristream::sigmoid(z[r]);
}

// Given activated gates a [4H], dh (total gradient wrt h_t), dc (gradient wrt
// c_t from the future), c_prev and c_t: writes dz [4H] and returns dc_prev in
// dc_prev_out.
void lstm_step_backward(const double* a, const double* c_prev, const double* c_t, const double* dh, const double* dc_in,
                        std::size_t H, double* dz, double* dc_prev_out) {
  for (std::size_t j = 0; j < H; ++j) {
    const double i = a[j], f = a[H + j], gg = a[2 * H + j], o = a[3 * H + j];
    const double tc = std::tanh(c_t[j]);
    const double d_o = dh[j] * tc;
    const double dc = dc_in[j] + dh[j] * o * (1.0 - tc * tc);
    dz[j] = dc * gg * i * (1.0 - i);
    dz[H + j] = dc * c_prev[j] * f * (1.0 - f);
    dz[2 * H + j] = dc * i * (1.0 - gg * gg);
    dz[3 * H + j] = d_o * o * (1.0 - o);
    dc_prev_out[j] = dc * f;
  }
}

}  // namespace

LstmState lstm_cell(Var x, Var h_prev, Var c_prev, Var w_input, Var w_hidden, Var bias) {
  const Tensor& vx = x.value();
  const Tensor& vh = h_prev.value();
  const Tensor& vc = c_prev.value();
  const Tensor& wx = w_input.value();
  const Tensor& wh = w_hidden.value();
  const Tensor& vb = bias.value();
  if (vx.rank() != 1) throw ShapeError("lstm_cell: x must be [In], got " + shape_str(vx.shape()));
  check_lstm_shapes(vx, vx.dim(0), wx, wh, vb, "lstm_cell");
  const std::size_t H = wh.dim(1), In = vx.dim(0);
  if (vh.shape() != Shape{H} || vc.shape() != Shape{H}) {
    throw ShapeError("lstm_cell: state shapes " + shape_str(vh.shape()) + ", " + shape_str(vc.shape()) +
                     " do not match hidden size " + std::to_string(H));
  }
  std::vector<double> a(4 * H);
  for (std::size_t r = 0; r < 4 * H; ++r) {
    double z = vb[r];
    for (std::size_t i = 0; i < In; ++i) z += wx.at(r, i) * vx[i];
    for (std::size_t j = 0; j < H; ++j) z += wh.at(r, j) * vh[j];
    a[r] = z;
  }
  activate_gates(a.data(), H);
  Tensor out({2 * H});
  for (std::size_t j = 0; j < H; ++j) {
    const double c = a[H + j] * vc[j] + a[j] * a[2 * H + j];
    out[H + j] = c;
    out[j] = a[3 * H + j] * std::tanh(c);
  }
  const std::size_t ix = x.id(), ih = h_prev.id(), ic = c_prev.id(), iwx = w_input.id(), iwh = w_hidden.id(),
                    ib = bias.id();
  Var both = x.graph().record(
      "lstm_cell", {x, h_prev, c_prev, w_input, w_hidden, bias}, std::move(out),
      [=, a = std::move(a)](Graph& g, std::size_t self) {
        const Node& n = g.node(self);
        const Tensor& vx = g.value(ix);
        const Tensor& vh = g.value(ih);
        const Tensor& vc = g.value(ic);
        const Tensor& wx = g.value(iwx);
        const Tensor& wh = g.value(iwh);
        std::vector<double> dz(4 * H), dc_prev(H);
        lstm_step_backward(a.data(), vc.data().data(), n.value.data().data() + H, n.grad.data().data(),
                           n.grad.data().data() + H, H, dz.data(), dc_prev.data());
        Tensor& gx = g.grad(ix);
        Tensor& gh = g.grad(ih);
        Tensor& gc = g.grad(ic);
        Tensor& gwx = g.grad(iwx);
        Tensor& gwh = g.grad(iwh);
        Tensor& gb = g.grad(ib);
        for (std::size_t j = 0; j < H; ++j) gc[j] += dc_prev[j];
        for (std::size_t r = 0; r < 4 * H; ++r) {
          gb[r] += dz[r];
          for (std::size_t i = 0; i < In; ++i) {
            gwx.at(r, i) += dz[r] * vx[i];
            gx[i] += wx.at(r, i) * dz[r];
          }
          for (std::size_t j = 0; j < H; ++j) {
            gwh.at(r, j) += dz[r] * vh[j];
            gh[j] += wh.at(r, j) * dz[r];
          }
        }
      });
  return {slice_channels(both, 0, H), slice_channels(both, H, H)};
}

Var lstm_scan(Var x, Var w_input, Var w_hidden, Var bias) {
  const Tensor& vx = x.value();
  if (vx.rank() != 2) throw ShapeError("lstm_scan: x must be [In, T], got " + shape_str(vx.shape()));
  check_lstm_shapes(vx, vx.dim(0), w_input.value(), w_hidden.value(), bias.value(), "lstm_scan");
  const Tensor& wh = w_hidden.value();
  const Tensor& vb = bias.value();
  const std::size_t H = wh.dim(1), T = vx.dim(1), G = 4 * H;

  // Input projections for all steps at once: [4H, T].
  const Tensor zx = tristream::matmul(w_input.value(), vx);

  struct Saved {
    std::vector<double> gates;  // [T, 4H] activated
    std::vector<double> cells;  // [T + 1, H], row 0 is the zero initial state
    std::vector<double> hidden;  // [T + 1, H]
  };
  auto saved = std::make_shared<Saved>();
  saved->gates.assign(T * G, 0.0);
  saved->cells.assign((T + 1) * H, 0.0);
  saved->hidden.assign((T + 1) * H, 0.0);

  std::vector<double> wh_t(H * G);
  for (std::size_t r = 0; r < G; ++r) {
    for (std::size_t j = 0; j < H; ++j) wh_t[j * G + r] = wh.at(r, j);
  }

  Tensor out({H, T});
  for (std::size_t t = 0; t < T; ++t) {
    double* a = saved->gates.data() + t * G;
    const double* hp = saved->hidden.data() + t * H;
    const double* cp = saved->cells.data() + t * H;
    double* hn = saved->hidden.data() + (t + 1) * H;
    double* cn = saved->cells.data() + (t + 1) * H;
    for (std::size_t r = 0; r < G; ++r) a[r] = zx[r * T + t] + vb[r];
    for (std::size_t j = 0; j < H; ++j) kernels::axpy(hp[j], wh_t.data() + j * G, a, G);
    activate_gates(a, H);
    for (std::size_t j = 0; j < H; ++j) {
      cn[j] = a[H + j] * cp[j] + a[j] * a[2 * H + j];
      hn[j] = a[3 * H + j] * std::tanh(cn[j]);
      out[j * T + t] = hn[j];
    }
  }

  const std::size_t ix = x.id(), iwx = w_input.id(), iwh = w_hidden.id(), ib = bias.id();
  return x.graph().record(
      "lstm_scan", {x, w_input, w_hidden, bias}, std::move(out), [=](Graph& g, std::size_t self) {
        const Tensor& gy = g.node(self).grad;
        const Tensor& vx = g.value(ix);
        const Tensor& wx = g.value(iwx);
        const Tensor& wh = g.value(iwh);
        const std::size_t In = vx.dim(0);
        Tensor dz_all({G, T});
        std::vector<double> dh(H), dh_next(H, 0.0), dc_next(H, 0.0), dc_prev(H), dz(G);
        std::vector<double> wh_t(H * G);
        for (std::size_t r = 0; r < G; ++r) {
          for (std::size_t j = 0; j < H; ++j) wh_t[j * G + r] = wh.at(r, j);
        }
        for (std::size_t step = T; step-- > 0;) {
          for (std::size_t j = 0; j < H; ++j) dh[j] = gy[j * T + step] + dh_next[j];
          lstm_step_backward(saved->gates.data() + step * G, saved->cells.data() + step * H,
                             saved->cells.data() + (step + 1) * H, dh.data(), dc_next.data(), H, dz.data(),
                             dc_prev.data());
          dc_next = dc_prev;
          for (std::size_t r = 0; r < G; ++r) dz_all[r * T + step] = dz[r];
          for (std::size_t j = 0; j < H; ++j) dh_next[j] = kernels::dot(wh_t.data() + j * G, dz.data(), G);
        }
        // h_{t-1} per unit as rows [H, T].
        std::vector<double> h_prev(H * T);
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t j = 0; j < H; ++j) h_prev[j * T + t] = saved->hidden[t * H + j];
        }
        Tensor& gwh = g.grad(iwh);
        for (std::size_t r = 0; r < G; ++r) {
          for (std::size_t j = 0; j < H; ++j) gwh.at(r, j) += kernels::dot(dz_all.row(r).data(), h_prev.data() + j * T, T);
        }
        Tensor& gwx = g.grad(iwx);
        Tensor& gb = g.grad(ib);
        Tensor& gx = g.grad(ix);
        for (std::size_t r = 0; r < G; ++r) {
          const double* dzr = dz_all.row(r).data();
          gb[r] += kernels::sum(dzr, T);
          for (std::size_t i = 0; i < In; ++i) {
            gwx.at(r, i) += kernels::dot(dzr, vx.row(i).data(), T);
            kernels::axpy(wx.at(r, i), dzr, gx.row(i).data(), T);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Loss

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Tensor& vl = logits.value();
  if (vl.rank() != 1 && vl.rank() != 2) throw ShapeError("cross_entropy: logits must be [K] or [B,K]");
  const std::size_t B = vl.rank() == 1 ? 1 : vl.dim(0);
  const std::size_t K = vl.rank() == 1 ? vl.dim(0) : vl.dim(1);
  if (labels.size() != B) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(B));
  }
  if (B == 0) throw ShapeError("cross_entropy: empty batch");
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] >= K) {
      throw ShapeError("cross_entropy: label " + std::to_string(labels[b]) + " out of range for " +
                       std::to_string(K) + " classes");
    }
    const auto row = vl.data().subspan(b * K, K);
    total += log_sum_exp(row) - row[labels[b]];
  }
  const std::vector<std::size_t> lab(labels.begin(), labels.end());
  const std::size_t il = logits.id();
  return logits.graph().record(
      "cross_entropy", {logits}, Tensor::scalar(total / static_cast<double>(B)), [il, lab, B, K](Graph& g, std::size_t self) {
        const double gy = g.node(self).grad[0] / static_cast<double>(B);
        const Tensor& vl = g.value(il);
        Tensor& gl = g.grad(il);
        for (std::size_t b = 0; b < B; ++b) {
          const auto row = vl.data().subspan(b * K, K);
          const double lse = log_sum_exp(row);
          for (std::size_t k = 0; k < K; ++k) {
            const double p = std::exp(row[k] - lse);
            gl[b * K + k] += gy * (p - (k == lab[b] ? 1.0 : 0.0));
          }
        }
      });
}

}  // namespace tristream::ad
