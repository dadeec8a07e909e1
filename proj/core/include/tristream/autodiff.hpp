#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tristream/params.hpp"
#include "tristream/rng.hpp"
#include "tristream/tensor.hpp"

namespace tristream::ad {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Graph& graph() const noexcept { return *graph_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse rule: reads the node's own grad and accumulates into its inputs.
using BackwardFn = std::function<void(Graph&, std::size_t self)>;

struct Node {
  std::string op;
  std::vector<std::size_t> inputs;
  Tensor value;
  Tensor grad;  // empty until first accumulation
  BackwardFn backward;
  std::string param_name;  // set for trainable leaves
};

/// Tape for one forward/backward pass.
///
/// Nodes are appended as operations execute, so ids are already a valid
/// evaluation order; backward() still derives an explicit topological order
/// from the loss to visit only reachable nodes. A graph built with
/// record=false keeps values but drops reverse rules (inference mode).
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(Tensor value);
  /// Trainable leaf. A second call with the same name returns the same node.
  Var parameter(const std::string& name, const Tensor& value);

  Var record(std::string op, std::vector<Var> inputs, Tensor value, BackwardFn backward);

  const Node& node(std::size_t id) const { return nodes_[id]; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad(std::size_t id);
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reachable nodes from `root`, inputs before consumers.
  std::vector<std::size_t> topological_order(std::size_t root) const;

  /// Reverse pass from a scalar loss. Returns dloss/dparam for every
  /// parameter registered in this graph; unreachable ones get zeros.
  /// Throws ShapeError for a non-scalar loss and NumericError (naming the op)
  /// when a reverse rule produces a non-finite gradient.
  std::map<std::string, Tensor> backward(Var loss);

  /// Smallest |pre-activation| seen by any relu; finite-difference checks use
  /// it to avoid evaluating next to a kink.
  double min_kink_distance() const noexcept { return min_kink_; }
  void note_kink_distance(double d) noexcept {
    if (d < min_kink_) min_kink_ = d;
  }

 private:
  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> params_;
  double min_kink_ = std::numeric_limits<double>::infinity();
};

/// Resolves parameter names from a ParamStore into graph leaves on demand.
class Binder {
 public:
  Binder(Graph& graph, const ParamStore& store) : graph_(graph), store_(store) {}
  Var operator()(const std::string& name) const { return graph_.parameter(name, store_.at(name)); }
  Graph& graph() const noexcept { return graph_; }
  const ParamStore& store() const noexcept { return store_; }

 private:
  Graph& graph_;
  const ParamStore& store_;
};

namespace debug {

/// Multiplies the upstream gradient of every node with op name `op` by
/// `scale` before its reverse rule runs. Used to verify that gradient checks
/// catch broken rules. Process-wide; not meant for concurrent training.
class ScopedBackwardFault {
 public:
  ScopedBackwardFault(std::string op, double scale);
  ~ScopedBackwardFault();
  ScopedBackwardFault(const ScopedBackwardFault&) = delete;
  ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;
};

}  // namespace debug

// Differentiable operations. Shapes follow the tensor-core conventions.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var matmul(Var a, Var b);
/// Sum of all elements -> scalar.
Var sum(Var x);

Var conv1d_causal(Var x, Var weights, Var bias, std::size_t dilation);
Var conv1d_anticausal(Var x, Var weights, Var bias, std::size_t dilation);
Var depthwise_conv1d(Var x, Var kernels, std::size_t dilation);
Var pointwise_conv1d(Var x, Var mixing);
Var avg_pool_time(Var x);
Var concat_channels(std::span<const Var> parts);
Var slice_channels(Var x, std::size_t offset, std::size_t count);
Var reverse_time(Var x);
Var reshape(Var x, Shape shape);

/// y[c,t] = scale[c] * x[c,t] (x may also be [C], giving y[c] = scale[c]*x[c]).
Var scale_channels(Var x, Var scale);
/// W x + b for x [in], W [out,in], b [out].
Var dense(Var x, Var weights, Var bias);

/// Inverted dropout. Train mode zeroes each element with probability `rate`
/// and scales survivors by 1/(1-rate); eval mode returns x itself.
Var dropout(Var x, double rate, bool train, Rng& rng);

struct LstmState {
  Var h;
  Var c;
};

/// One LSTM step. Gate rows of the [4H, *] weights are ordered
/// input, forget, candidate, output.
LstmState lstm_cell(Var x, Var h_prev, Var c_prev, Var w_input, Var w_hidden, Var bias);

/// Full forward scan from zero state over x [In, T]; returns h [H, T].
Var lstm_scan(Var x, Var w_input, Var w_hidden, Var bias);

/// Mean over rows of -log softmax(logits)[label]; logits [B,K] or [K].
Var cross_entropy(Var logits, std::span<const std::size_t> labels);

}  // namespace tristream::ad
