#include "embedpipe/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "kernels.hpp"

namespace embedpipe {

namespace {

using Node = Graph::Node;

Graph& graph_of(Var v, std::string_view op) {
  if (!v.valid()) throw TensorError(std::string(op) + ": invalid (default-constructed) Var");
  return *v.graph();
}

Graph& common_graph(std::span<const Var> vars, std::string_view op) {
  if (vars.empty()) throw TensorError(std::string(op) + ": no operands");
  Graph& g = graph_of(vars[0], op);
  for (Var v : vars) {
    if (&graph_of(v, op) != &g) {
      throw TensorError(std::string(op) + ": operands belong to different graphs");
    }
  }
  return g;
}

void require_rank2(std::string_view op, const Tensor& t) {
  if (t.shape().rank() != 2) throw ShapeError(std::string(op), {t.shape()}, "expected a matrix");
}

void require_finite(std::string_view what, const Tensor& t) {
  if (!t.all_finite()) throw NonFiniteError(std::string(what) + ": non-finite value in input");
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Tensor& Var::value() const {
  if (!graph_) throw TensorError("value() on invalid Var");
  return graph_->value(*this);
}

bool Var::requires_grad() const { return graph_ && graph_->needs_grad(*this); }

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kTileRows: return "tile_rows";
    case OpKind::kSelectRows: return "select_rows";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kTanh: return "tanh";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kTemporalMaxPool: return "temporal_max_pool";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kMse: return "mse";
    case OpKind::kCosineLoss: return "cosine_loss";
    case OpKind::kGruCell: return "gru_cell";
    case OpKind::kReshape: return "reshape";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Graph

Var Graph::push_leaf(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::constant(Tensor value) {
  require_finite("constant", value);
  Node n;
  n.value = std::move(value);
  return push_leaf(std::move(n));
}

Var Graph::parameter(Tensor& param) {
  require_finite("parameter", param);
  Node n;
  n.borrowed = &param;
  if (param.requires_grad()) {
    n.sink = &param;
    n.needs_grad = true;
  }
  return push_leaf(std::move(n));
}

Var Graph::frozen(const Tensor& param) {
  require_finite("parameter", param);
  Node n;
  n.borrowed = &param;
  return push_leaf(std::move(n));
}

Var Graph::record(OpKind op, std::initializer_list<Var> inputs, Tensor value) {
  return record(op, std::span<const Var>(inputs.begin(), inputs.size()), std::move(value));
}

Var Graph::record(OpKind op, std::span<const Var> inputs, Tensor value) {
  Node n;
  n.op = op;
  n.inputs.reserve(inputs.size());
  for (Var v : inputs) {
    n.inputs.push_back(v.id());
    n.needs_grad = n.needs_grad || nodes_[v.id()].needs_grad;
  }
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

namespace {

std::vector<double>* grad_slot(std::vector<Node>& nodes, std::uint32_t id) {
  Node& n = nodes[id];
  if (!n.needs_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(n.result().size(), 0.0);
  return &n.grad;
}

void backward_node(std::vector<Node>& nodes, std::uint32_t id);

}  // namespace

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw TensorError("backward: loss belongs to a different graph");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw TensorError("backward: loss must be scalar, got shape " + lv.shape().str());
  for (Node& n : nodes_) n.grad.clear();
  Node& root = nodes_[loss.id()];
  if (!root.needs_grad) return;
  root.grad.assign(1, 1.0);
  for (std::uint32_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.op == OpKind::kLeaf) {
      if (n.sink) n.sink->accumulate_grad(n.grad);
      continue;
    }
    backward_node(nodes_, id);
  }
}

// ---------------------------------------------------------------------------
// Forward ops

Var matmul(Var a, Var b) {
  Var vs[] = {a, b};
  Graph& g = common_graph(vs, "matmul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape().rank() != 2 || y.shape().rank() != 2 || x.shape()[1] != y.shape()[0]) {
    throw ShapeError("matmul", {x.shape(), y.shape()});
  }
  const std::size_t m = x.shape()[0], k = x.shape()[1], n = y.shape()[1];
  Tensor out(Shape{m, n});
  kernels::gemm_nn(x.data().data(), y.data().data(), out.data().data(), m, k, n, false);
  if (!out.all_finite()) throw NonFiniteError("matmul: non-finite result");
  return g.record(OpKind::kMatMul, {a, b}, std::move(out));
}

Var add(Var a, Var b) {
  Var vs[] = {a, b};
  Graph& g = common_graph(vs, "add");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape() == y.shape()) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return g.record(OpKind::kAdd, {a, b}, std::move(out));
  }
  if (y.shape().rank() == 1 && x.shape().rank() >= 1 && x.cols() == y.size()) {
    Tensor out(x.shape());
    const std::size_t n = y.size();
    for (std::size_t r = 0; r < out.size(); r += n)
      for (std::size_t j = 0; j < n; ++j) out[r + j] = x[r + j] + y[j];
    return g.record(OpKind::kAddBias, {a, b}, std::move(out));
  }
  throw ShapeError("add", {x.shape(), y.shape()});
}

Var sub(Var a, Var b) {
  Var vs[] = {a, b};
  Graph& g = common_graph(vs, "sub");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (!(x.shape() == y.shape())) throw ShapeError("sub", {x.shape(), y.shape()});
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return g.record(OpKind::kSub, {a, b}, std::move(out));
}

Var mul(Var a, Var b) {
  Var vs[] = {a, b};
  Graph& g = common_graph(vs, "mul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (!(x.shape() == y.shape())) throw ShapeError("mul", {x.shape(), y.shape()});
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return g.record(OpKind::kMul, {a, b}, std::move(out));
}

Var scale(Var a, double factor) {
  Graph& g = graph_of(a, "scale");
  if (!std::isfinite(factor)) throw NonFiniteError("scale: non-finite factor");
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  Var v = g.record(OpKind::kScale, {a}, std::move(out));
  g.node(v).scalar = factor;
  return v;
}

Var concat_cols(std::span<const Var> parts) {
  Graph& g = common_graph(parts, "concat");
  std::vector<Shape> shapes;
  std::size_t rows = 0, cols = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& t = parts[i].value();
    shapes.push_back(t.shape());
    if (t.shape().rank() != 2) throw ShapeError("concat", shapes, "expected matrices");
    if (i == 0) rows = t.rows();
    if (t.rows() != rows) throw ShapeError("concat", shapes, "row counts differ");
    cols += t.cols();
  }
  Tensor out(Shape{rows, cols});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& t = p.value();
    offsets.push_back(off);
    const std::size_t c = t.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(t.data().data() + r * c, c, out.data().data() + r * cols + off);
    }
    off += c;
  }
  Var v = g.record(OpKind::kConcatCols, parts, std::move(out));
  g.node(v).ints = std::move(offsets);
  return v;
}

Var concat_rows(std::span<const Var> parts) {
  Graph& g = common_graph(parts, "concat_rows");
  std::vector<Shape> shapes;
  std::size_t rows = 0, cols = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& t = parts[i].value();
    shapes.push_back(t.shape());
    if (t.shape().rank() != 2) throw ShapeError("concat_rows", shapes, "expected matrices");
    if (i == 0) cols = t.cols();
    if (t.cols() != cols) throw ShapeError("concat_rows", shapes, "column counts differ");
    rows += t.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (Var p : parts) {
    const auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  return g.record(OpKind::kConcatRows, parts, Tensor(Shape{rows, cols}, std::move(data)));
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Graph& g = graph_of(a, "slice_rows");
  const Tensor& x = a.value();
  require_rank2("slice_rows", x);
  if (count == 0 || begin + count > x.rows()) {
    throw ShapeError("slice_rows", {x.shape()},
                     "rows [" + std::to_string(begin) + "," + std::to_string(begin + count) + ")");
  }
  const std::size_t c = x.cols();
  std::vector<double> data(x.data().begin() + begin * c, x.data().begin() + (begin + count) * c);
  Var v = g.record(OpKind::kSliceRows, {a}, Tensor(Shape{count, c}, std::move(data)));
  g.node(v).ints = {begin};
  return v;
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Graph& g = graph_of(a, "slice_cols");
  const Tensor& x = a.value();
  require_rank2("slice_cols", x);
  if (count == 0 || begin + count > x.cols()) {
    throw ShapeError("slice_cols", {x.shape()},
                     "cols [" + std::to_string(begin) + "," + std::to_string(begin + count) + ")");
  }
  const std::size_t rows = x.rows(), c = x.cols();
  Tensor out(Shape{rows, count});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data().data() + r * c + begin, count, out.data().data() + r * count);
  }
  Var v = g.record(OpKind::kSliceCols, {a}, std::move(out));
  g.node(v).ints = {begin};
  return v;
}

Var tile_rows(Var a, std::size_t times) {
  Graph& g = graph_of(a, "tile_rows");
  const Tensor& x = a.value();
  require_rank2("tile_rows", x);
  if (times == 0) throw ShapeError("tile_rows", {x.shape()}, "times must be positive");
  std::vector<double> data;
  data.reserve(x.size() * times);
  for (std::size_t t = 0; t < times; ++t) data.insert(data.end(), x.data().begin(), x.data().end());
  return g.record(OpKind::kTileRows, {a}, Tensor(Shape{x.rows() * times, x.cols()}, std::move(data)));
}

Var select_rows(Var when_true, Var when_false, std::span<const std::uint8_t> take_true) {
  Var vs[] = {when_true, when_false};
  Graph& g = common_graph(vs, "select_rows");
  const Tensor& x = when_true.value();
  const Tensor& y = when_false.value();
  if (!(x.shape() == y.shape()) || x.shape().rank() != 2 || take_true.size() != x.rows()) {
    throw ShapeError("select_rows", {x.shape(), y.shape()},
                     "mask has " + std::to_string(take_true.size()) + " rows");
  }
  const std::size_t c = x.cols();
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const Tensor& src = take_true[r] ? x : y;
    std::copy_n(src.data().data() + r * c, c, out.data().data() + r * c);
  }
  Var v = g.record(OpKind::kSelectRows, {when_true, when_false}, std::move(out));
  g.node(v).ints.assign(take_true.begin(), take_true.end());
  return v;
}

Var embedding(Var table, std::span<const int> ids) {
  Graph& g = graph_of(table, "embedding");
  const Tensor& t = table.value();
  require_rank2("embedding", t);
  if (ids.empty()) throw ShapeError("embedding", {t.shape()}, "no ids");
  const std::size_t vocab = t.rows(), h = t.cols();
  Tensor out(Shape{ids.size(), h});
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw TensorError("embedding: id " + std::to_string(ids[i]) + " out of range for table of " +
                        std::to_string(vocab) + " rows");
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
    std::copy_n(t.data().data() + rows[i] * h, h, out.data().data() + i * h);
  }
  Var v = g.record(OpKind::kEmbedding, {table}, std::move(out));
  g.node(v).ints = std::move(rows);
  return v;
}

namespace {

template <typename F>
Var unary(Var a, OpKind kind, F f) {
  Graph& g = graph_of(a, op_name(kind));
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return g.record(kind, {a}, std::move(out));
}

}  // namespace

Var tanh(Var a) { return unary(a, OpKind::kTanh, [](double x) { return std::tanh(x); }); }
Var relu(Var a) { return unary(a, OpKind::kRelu, [](double x) { return x > 0.0 ? x : 0.0; }); }
Var sigmoid(Var a) { return unary(a, OpKind::kSigmoid, stable_sigmoid); }

Var softmax(Var a) {
  Graph& g = graph_of(a, "softmax");
  const Tensor& x = a.value();
  if (x.shape().rank() == 0) throw ShapeError("softmax", {x.shape()}, "needs at least one axis");
  Tensor out(x.shape());
  const std::size_t rows = x.rows(), c = x.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = x.data().data() + r * c;
    double* yi = out.data().data() + r * c;
    const double mx = *std::max_element(xi, xi + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (yi[j] = std::exp(xi[j] - mx));
    for (std::size_t j = 0; j < c; ++j) yi[j] /= z;
  }
  return g.record(OpKind::kSoftmax, {a}, std::move(out));
}

Var log_softmax(Var a) {
  Graph& g = graph_of(a, "log_softmax");
  const Tensor& x = a.value();
  if (x.shape().rank() == 0) throw ShapeError("log_softmax", {x.shape()}, "needs at least one axis");
  Tensor out(x.shape());
  const std::size_t rows = x.rows(), c = x.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = x.data().data() + r * c;
    double* yi = out.data().data() + r * c;
    const double mx = *std::max_element(xi, xi + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(xi[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) yi[j] = xi[j] - lse;
  }
  return g.record(OpKind::kLogSoftmax, {a}, std::move(out));
}

namespace {

Var max_pool_impl(Var states, std::size_t batch, std::span<const std::size_t> lengths, Shape out_shape) {
  Graph& g = graph_of(states, "temporal_max_pool");
  const Tensor& x = states.value();
  require_rank2("temporal_max_pool", x);
  if (batch == 0 || x.rows() % batch != 0) {
    throw ShapeError("temporal_max_pool", {x.shape()}, "rows not divisible by batch " + std::to_string(batch));
  }
  const std::size_t steps = x.rows() / batch, d = x.cols();
  if (lengths.size() != batch) throw ShapeError("temporal_max_pool", {x.shape()}, "lengths size mismatch");
  Tensor out(out_shape);
  std::vector<std::size_t> arg(batch * d);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = lengths[b];
    if (len == 0 || len > steps) {
      throw ShapeError("temporal_max_pool", {x.shape()}, "length " + std::to_string(len) + " outside [1," +
                                                             std::to_string(steps) + "]");
    }
    for (std::size_t j = 0; j < d; ++j) {
      std::size_t best = b;
      double bv = x.data()[b * d + j];
      for (std::size_t t = 1; t < len; ++t) {
        const std::size_t row = t * batch + b;
        const double v = x.data()[row * d + j];
        if (v > bv) {
          bv = v;
          best = row;
        }
      }
      out[b * d + j] = bv;
      arg[b * d + j] = best;
    }
  }
  Var v = g.record(OpKind::kTemporalMaxPool, {states}, std::move(out));
  g.node(v).ints = std::move(arg);
  return v;
}

}  // namespace

Var temporal_max_pool(Var states) {
  const Tensor& x = states.value();
  require_rank2("temporal_max_pool", x);
  const std::size_t len = x.rows();
  return max_pool_impl(states, 1, std::span<const std::size_t>(&len, 1), Shape{x.cols()});
}

Var temporal_max_pool(Var states, std::size_t batch, std::span<const std::size_t> lengths) {
  const Tensor& x = states.value();
  require_rank2("temporal_max_pool", x);
  return max_pool_impl(states, batch, lengths, Shape{batch, x.cols()});
}

Var mean(Var a) {
  Graph& g = graph_of(a, "mean");
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.data()) s += v;
  return g.record(OpKind::kMean, {a}, Tensor::scalar(s / static_cast<double>(x.size())));
}

Var sum(Var a) {
  Graph& g = graph_of(a, "sum");
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return g.record(OpKind::kSum, {a}, Tensor::scalar(s));
}

Var cross_entropy(Var logits, std::span<const int> targets, int ignore_index) {
  Graph& g = graph_of(logits, "cross_entropy");
  const Tensor& x = logits.value();
  require_rank2("cross_entropy", x);
  const std::size_t n = x.rows(), v = x.cols();
  if (targets.size() != n) {
    throw ShapeError("cross_entropy", {x.shape()}, std::to_string(targets.size()) + " targets");
  }
  std::vector<double> probs(n * v, 0.0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] == ignore_index) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
      throw TensorError("cross_entropy: target " + std::to_string(targets[r]) + " out of range for " +
                        std::to_string(v) + " classes");
    }
    const double* xi = x.data().data() + r * v;
    double* pi = probs.data() + r * v;
    const double mx = *std::max_element(xi, xi + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += (pi[j] = std::exp(xi[j] - mx));
    for (std::size_t j = 0; j < v; ++j) pi[j] /= z;
    total += mx + std::log(z) - xi[targets[r]];
    ++count;
  }
  if (count == 0) throw TensorError("cross_entropy: every target is ignored");
  Var out = g.record(OpKind::kCrossEntropy, {logits}, Tensor::scalar(total / static_cast<double>(count)));
  Node& node = g.node(out);
  node.aux = std::move(probs);
  node.ints.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    node.ints[r] = targets[r] == ignore_index ? std::numeric_limits<std::size_t>::max()
                                              : static_cast<std::size_t>(targets[r]);
  }
  node.scalar = static_cast<double>(count);
  return out;
}

Var mse(Var a, Var b) {
  Var vs[] = {a, b};
  Graph& g = common_graph(vs, "mse");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (!(x.shape() == y.shape())) throw ShapeError("mse", {x.shape(), y.shape()});
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return g.record(OpKind::kMse, {a, b}, Tensor::scalar(s / static_cast<double>(x.size())));
}

Var cosine_loss(Var a, Var b) {
  Var vs[] = {a, b};
  Graph& g = common_graph(vs, "cosine_loss");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (!(x.shape() == y.shape()) || x.shape().rank() == 0) throw ShapeError("cosine_loss", {x.shape(), y.shape()});
  const std::size_t rows = x.rows(), c = x.cols();
  std::vector<double> aux(rows * 3);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = x[r * c + j], q = y[r * c + j];
      dot += p * q;
      nx += p * p;
      ny += q * q;
    }
    nx = std::sqrt(nx);
    ny = std::sqrt(ny);
    if (nx == 0.0 || ny == 0.0) throw TensorError("cosine_loss: zero vector in row " + std::to_string(r));
    aux[3 * r] = dot;
    aux[3 * r + 1] = nx;
    aux[3 * r + 2] = ny;
    total += 1.0 - dot / (nx * ny);
  }
  Var out = g.record(OpKind::kCosineLoss, {a, b}, Tensor::scalar(total / static_cast<double>(rows)));
  g.node(out).aux = std::move(aux);
  return out;
}

Var gru_cell(Var gx, Var gh, Var h) {
  Var vs[] = {gx, gh, h};
  Graph& g = common_graph(vs, "gru_cell");
  const Tensor& xi = gx.value();
  const Tensor& hi = gh.value();
  const Tensor& hp = h.value();
  if (hp.shape().rank() != 2 || !(xi.shape() == hi.shape()) || xi.shape().rank() != 2 ||
      xi.rows() != hp.rows() || xi.cols() != 3 * hp.cols()) {
    throw ShapeError("gru_cell", {xi.shape(), hi.shape(), hp.shape()});
  }
  const std::size_t batch = hp.rows(), hd = hp.cols();
  Tensor out(hp.shape());
  // aux layout per row: r | z | n | candidate hidden pre-activation
  std::vector<double> aux(batch * 4 * hd);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* x = xi.data().data() + b * 3 * hd;
    const double* u = hi.data().data() + b * 3 * hd;
    const double* hprev = hp.data().data() + b * hd;
    double* store = aux.data() + b * 4 * hd;
    double* o = out.data().data() + b * hd;
    for (std::size_t j = 0; j < hd; ++j) {
      const double r = stable_sigmoid(x[j] + u[j]);
      const double z = stable_sigmoid(x[hd + j] + u[hd + j]);
      const double n = std::tanh(x[2 * hd + j] + r * u[2 * hd + j]);
      store[j] = r;
      store[hd + j] = z;
      store[2 * hd + j] = n;
      store[3 * hd + j] = u[2 * hd + j];
      o[j] = n + z * (hprev[j] - n);
    }
  }
  Var v = g.record(OpKind::kGruCell, {gx, gh, h}, std::move(out));
  g.node(v).aux = std::move(aux);
  return v;
}

Var reshape(Var a, Shape shape) {
  Graph& g = graph_of(a, "reshape");
  return g.record(OpKind::kReshape, {a}, a.value().reshaped(shape));
}

// ---------------------------------------------------------------------------
// Backward

namespace {

void backward_node(std::vector<Node>& nodes, std::uint32_t id) {
  const Node& n = nodes[id];
  const std::vector<double>& gout = n.grad;
  const Tensor& out = n.result();
  auto in = [&](std::size_t i) -> const Tensor& { return nodes[n.inputs[i]].result(); };
  auto slot = [&](std::size_t i) { return grad_slot(nodes, n.inputs[i]); };

  switch (n.op) {
    case OpKind::kLeaf:
      break;
    case OpKind::kMatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t m = a.shape()[0], k = a.shape()[1], cols = b.shape()[1];
      if (auto* ga = slot(0)) kernels::gemm_nt_acc(gout.data(), b.data().data(), ga->data(), m, cols, k);
      if (auto* gb = slot(1)) kernels::gemm_tn_acc(a.data().data(), gout.data(), gb->data(), m, k, cols);
      break;
    }
    case OpKind::kAdd: {
      for (std::size_t i = 0; i < 2; ++i) {
        if (auto* gi = slot(i))
          for (std::size_t j = 0; j < gout.size(); ++j) (*gi)[j] += gout[j];
      }
      break;
    }
    case OpKind::kAddBias: {
      if (auto* ga = slot(0))
        for (std::size_t j = 0; j < gout.size(); ++j) (*ga)[j] += gout[j];
      if (auto* gb = slot(1)) {
        const std::size_t c = gb->size();
        for (std::size_t r = 0; r < gout.size(); r += c)
          for (std::size_t j = 0; j < c; ++j) (*gb)[j] += gout[r + j];
      }
      break;
    }
    case OpKind::kSub: {
      if (auto* ga = slot(0))
        for (std::size_t j = 0; j < gout.size(); ++j) (*ga)[j] += gout[j];
      if (auto* gb = slot(1))
        for (std::size_t j = 0; j < gout.size(); ++j) (*gb)[j] -= gout[j];
      break;
    }
    case OpKind::kMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (auto* ga = slot(0))
        for (std::size_t j = 0; j < gout.size(); ++j) (*ga)[j] += gout[j] * b[j];
      if (auto* gb = slot(1))
        for (std::size_t j = 0; j < gout.size(); ++j) (*gb)[j] += gout[j] * a[j];
      break;
    }
    case OpKind::kScale: {
      if (auto* ga = slot(0))
        for (std::size_t j = 0; j < gout.size(); ++j) (*ga)[j] += gout[j] * n.scalar;
      break;
    }
    case OpKind::kConcatCols: {
      const std::size_t rows = out.rows(), cols = out.cols();
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        auto* gi = slot(i);
        if (!gi) continue;
        const std::size_t c = in(i).cols(), off = n.ints[i];
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) (*gi)[r * c + j] += gout[r * cols + off + j];
      }
      break;
    }
    case OpKind::kConcatRows: {
      std::size_t off = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const std::size_t sz = in(i).size();
        if (auto* gi = slot(i))
          for (std::size_t j = 0; j < sz; ++j) (*gi)[j] += gout[off + j];
        off += sz;
      }
      break;
    }
    case OpKind::kSliceRows: {
      if (auto* ga = slot(0)) {
        const std::size_t off = n.ints[0] * out.cols();
        for (std::size_t j = 0; j < gout.size(); ++j) (*ga)[off + j] += gout[j];
      }
      break;
    }
    case OpKind::kSliceCols: {
      if (auto* ga = slot(0)) {
        const std::size_t rows = out.rows(), count = out.cols(), c = in(0).cols(), begin = n.ints[0];
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < count; ++j) (*ga)[r * c + begin + j] += gout[r * count + j];
      }
      break;
    }
    case OpKind::kTileRows: {
      if (auto* ga = slot(0)) {
        const std::size_t sz = ga->size();
        for (std::size_t j = 0; j < gout.size(); ++j) (*ga)[j % sz] += gout[j];
      }
      break;
    }
    case OpKind::kSelectRows: {
      const std::size_t c = out.cols();
      for (std::size_t i = 0; i < 2; ++i) {
        auto* gi = slot(i);
        if (!gi) continue;
        const bool want = (i == 0);
        for (std::size_t r = 0; r < out.rows(); ++r) {
          if ((n.ints[r] != 0) != want) continue;
          for (std::size_t j = 0; j < c; ++j) (*gi)[r * c + j] += gout[r * c + j];
        }
      }
      break;
    }
    case OpKind::kEmbedding: {
      if (auto* gt = slot(0)) {
        const std::size_t h = out.cols();
        for (std::size_t i = 0; i < n.ints.size(); ++i) {
          double* dst = gt->data() + n.ints[i] * h;
          const double* src = gout.data() + i * h;
          for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
        }
      }
      break;
    }
    case OpKind::kTanh: {
      if (auto* ga = slot(0))
        for (std::size_t j = 0; j < gout.size(); ++j) (*ga)[j] += gout[j] * (1.0 - out[j] * out[j]);
      break;
    }
    case OpKind::kRelu: {
      if (auto* ga = slot(0))
        for (std::size_t j = 0; j < gout.size(); ++j) (*ga)[j] += out[j] > 0.0 ? gout[j] : 0.0;
      break;
    }
    case OpKind::kSigmoid: {
      if (auto* ga = slot(0))
        for (std::size_t j = 0; j < gout.size(); ++j) (*ga)[j] += gout[j] * out[j] * (1.0 - out[j]);
      break;
    }
    case OpKind::kSoftmax: {
      if (auto* ga = slot(0)) {
        const std::size_t rows = out.rows(), c = out.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += gout[r * c + j] * out[r * c + j];
          for (std::size_t j = 0; j < c; ++j) (*ga)[r * c + j] += out[r * c + j] * (gout[r * c + j] - dot);
        }
      }
      break;
    }
    case OpKind::kLogSoftmax: {
      if (auto* ga = slot(0)) {
        const std::size_t rows = out.rows(), c = out.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          double total = 0.0;
          for (std::size_t j = 0; j < c; ++j) total += gout[r * c + j];
          for (std::size_t j = 0; j < c; ++j)
            (*ga)[r * c + j] += gout[r * c + j] - std::exp(out[r * c + j]) * total;
        }
      }
      break;
    }
    case OpKind::kTemporalMaxPool: {
      if (auto* ga = slot(0)) {
        const std::size_t d = in(0).cols();
        for (std::size_t i = 0; i < n.ints.size(); ++i) (*ga)[n.ints[i] * d + i % d] += gout[i];
      }
      break;
    }
    case OpKind::kMean: {
      if (auto* ga = slot(0)) {
        const double g = gout[0] / static_cast<double>(ga->size());
        for (double& v : *ga) v += g;
      }
      break;
    }
    case OpKind::kSum: {
      if (auto* ga = slot(0))
        for (double& v : *ga) v += gout[0];
      break;
    }
    case OpKind::kCrossEntropy: {
      if (auto* ga = slot(0)) {
        const std::size_t rows = in(0).rows(), c = in(0).cols();
        const double g = gout[0] / n.scalar;
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t t = n.ints[r];
          if (t == std::numeric_limits<std::size_t>::max()) continue;
          for (std::size_t j = 0; j < c; ++j) (*ga)[r * c + j] += g * n.aux[r * c + j];
          (*ga)[r * c + t] -= g;
        }
      }
      break;
    }
    case OpKind::kMse: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const double g = 2.0 * gout[0] / static_cast<double>(a.size());
      if (auto* ga = slot(0))
        for (std::size_t j = 0; j < a.size(); ++j) (*ga)[j] += g * (a[j] - b[j]);
      if (auto* gb = slot(1))
        for (std::size_t j = 0; j < a.size(); ++j) (*gb)[j] -= g * (a[j] - b[j]);
      break;
    }
    case OpKind::kCosineLoss: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t rows = a.rows(), c = a.cols();
      const double g = -gout[0] / static_cast<double>(rows);
      auto* ga = slot(0);
      auto* gb = slot(1);
      for (std::size_t r = 0; r < rows; ++r) {
        const double dot = n.aux[3 * r], na = n.aux[3 * r + 1], nb = n.aux[3 * r + 2];
        const double cs = dot / (na * nb);
        for (std::size_t j = 0; j < c; ++j) {
          const double x = a[r * c + j], y = b[r * c + j];
          if (ga) (*ga)[r * c + j] += g * (y / (na * nb) - cs * x / (na * na));
          if (gb) (*gb)[r * c + j] += g * (x / (na * nb) - cs * y / (nb * nb));
        }
      }
      break;
    }
    case OpKind::kGruCell: {
      const Tensor& hp = in(2);
      const std::size_t batch = hp.rows(), hd = hp.cols();
      auto* gx = slot(0);
      auto* gh = slot(1);
      auto* ghp = slot(2);
      for (std::size_t b = 0; b < batch; ++b) {
        const double* store = n.aux.data() + b * 4 * hd;
        const double* hprev = hp.data().data() + b * hd;
        const double* dh = gout.data() + b * hd;
        for (std::size_t j = 0; j < hd; ++j) {
          const double r = store[j], z = store[hd + j], cand = store[2 * hd + j], un = store[3 * hd + j];
          const double dz = dh[j] * (hprev[j] - cand);
          const double dn = dh[j] * (1.0 - z);
          const double dan = dn * (1.0 - cand * cand);
          const double dr = dan * un;
          const double dar = dr * r * (1.0 - r);
          const double daz = dz * z * (1.0 - z);
          const std::size_t base = b * 3 * hd;
          if (gx) {
            (*gx)[base + j] += dar;
            (*gx)[base + hd + j] += daz;
            (*gx)[base + 2 * hd + j] += dan;
          }
          if (gh) {
            (*gh)[base + j] += dar;
            (*gh)[base + hd + j] += daz;
            (*gh)[base + 2 * hd + j] += dan * r;
          }
          if (ghp) (*ghp)[b * hd + j] += dh[j] * z;
        }
      }
      break;
    }
    case OpKind::kReshape: {
      if (auto* ga = slot(0))
        for (std::size_t j = 0; j < gout.size(); ++j) (*ga)[j] += gout[j];
      break;
    }
  }
}

}  // namespace

}  // namespace embedpipe
