#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "embedpipe/tensor.hpp"

namespace embedpipe {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while its graph lives.
class Var {
 public:
  Var() = default;

  Graph* graph() const { return graph_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Graph;
  Var(Graph* graph, std::uint32_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatMul,
  kAdd,
  kAddBias,
  kSub,
  kMul,
  kScale,
  kConcatCols,
  kConcatRows,
  kSliceRows,
  kSliceCols,
  kTileRows,
  kSelectRows,
  kEmbedding,
  kTanh,
  kRelu,
  kSigmoid,
  kSoftmax,
  kLogSoftmax,
  kTemporalMaxPool,
  kMean,
  kSum,
  kCrossEntropy,
  kMse,
  kCosineLoss,
  kGruCell,
  kReshape,
};

std::string_view op_name(OpKind kind);

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is a topological order and backward is a single reverse sweep.
///
/// Leaves either own their value (constant) or borrow a caller tensor
/// (parameter). Parameters that require grad receive accumulated gradients
/// on backward; the caller resets them between steps.
class Graph {
 public:
  struct Node {
    OpKind op = OpKind::kLeaf;
    std::vector<std::uint32_t> inputs;
    Tensor value;
    const Tensor* borrowed = nullptr;
    Tensor* sink = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;
    std::vector<std::size_t> ints;
    std::vector<double> aux;
    double scalar = 0.0;

    const Tensor& result() const { return borrowed ? *borrowed : value; }
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf owning a copy of `value`; never receives gradients.
  Var constant(Tensor value);
  /// Leaf borrowing `param`. When param.requires_grad() the backward pass
  /// accumulates into param's grad buffer; otherwise it acts as a constant.
  Var parameter(Tensor& param);
  /// Leaf borrowing `param` that never receives gradients.
  Var frozen(const Tensor& param);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every leaf that needs grad.
  /// Intermediate gradients are reset at the start of each call.
  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_[v.id()].result(); }
  /// Gradient of the last backward pass at `v`; empty when none reached it.
  std::span<const double> grad(Var v) const { return nodes_[v.id()].grad; }
  OpKind op(Var v) const { return nodes_[v.id()].op; }
  std::span<const std::uint32_t> inputs(Var v) const { return nodes_[v.id()].inputs; }
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Appends an op record; used by the op implementations.
  Var record(OpKind op, std::initializer_list<Var> inputs, Tensor value);
  Var record(OpKind op, std::span<const Var> inputs, Tensor value);
  Node& node(Var v) { return nodes_[v.id()]; }
  const Node& node(std::uint32_t id) const { return nodes_[id]; }

 private:
  Var push_leaf(Node node);

  std::vector<Node> nodes_;
};

// Forward ops. Every op validates shapes and throws ShapeError naming itself.

/// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);
/// Elementwise sum of equal shapes, or [.., n] + [n] bias broadcast over rows.
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product of equal shapes.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// Concatenation along the last axis of matrices with equal row counts.
Var concat_cols(std::span<const Var> parts);
/// Concatenation along the first axis of matrices with equal column counts.
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
/// Repeats all rows of `a` `times` times: row r of the result is row r % m.
Var tile_rows(Var a, std::size_t times);
/// Row-wise choice: row i comes from `when_true` if take_true[i], else `when_false`.
Var select_rows(Var when_true, Var when_false, std::span<const std::uint8_t> take_true);
/// Gathers rows of `table` [V,H] for `ids` -> [n,H].
Var embedding(Var table, std::span<const int> ids);
Var tanh(Var a);
Var relu(Var a);
Var sigmoid(Var a);
/// Softmax over the last axis.
Var softmax(Var a);
Var log_softmax(Var a);
/// Elementwise max over time of time-major states [T,D] -> [D].
Var temporal_max_pool(Var states);
/// Batched variant: states [T*B, D] laid out time-major (row t*B+b);
/// sequence b only contributes steps t < lengths[b]. Returns [B, D].
Var temporal_max_pool(Var states, std::size_t batch, std::span<const std::size_t> lengths);
Var mean(Var a);
Var sum(Var a);
/// Mean token cross-entropy of logits [N,V] against targets; entries equal
/// to `ignore_index` are excluded from both numerator and count.
Var cross_entropy(Var logits, std::span<const int> targets, int ignore_index = 0);
/// Mean over all elements of (a-b)^2.
Var mse(Var a, Var b);
/// Mean over rows of 1 - cos(a_i, b_i).
Var cosine_loss(Var a, Var b);
/// Gated recurrent update given input gates gx [B,3H], hidden gates gh [B,3H]
/// (both ordered reset|update|candidate) and previous state h [B,H].
Var gru_cell(Var gx, Var gh, Var h);
Var reshape(Var a, Shape shape);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace embedpipe
