#pragma once

// Tape-based reverse-mode differentiation over Array2 values.
//
// A Graph owns its nodes; a Var is a cheap handle (graph pointer + index).
// Nodes are appended in evaluation order, so node ids are a topological
// order and backward is a single reverse sweep. Values are never mutated
// after a node is created.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "otkt/array2.hpp"

namespace otkt::ad {

class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Array2& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  // Scalar read of a 1x1 node.
  double item() const;

  Graph* graph() const { return graph_; }
  std::size_t id() const { return id_; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Receives d(root)/d(output) plus the node's own forward value and adds
// contributions into the parents' gradient buffers. A parent buffer is
// nullptr when that parent does not require a gradient.
using BackwardRule = std::function<void(const Array2& grad_out, const Array2& out,
                                        std::span<Array2* const> parent_grads)>;

struct Node {
  Array2 value;
  std::vector<std::size_t> parents;
  std::string op;
  BackwardRule backward;
  bool requires_grad = false;
};

class Gradients {
 public:
  explicit Gradients(std::vector<Array2> grads) : grads_(std::move(grads)) {}
  const Array2& of(const Var& v) const { return grads_.at(v.id()); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::vector<Array2> grads_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Differentiable leaf (parameter or input we want gradients for).
  Var leaf(Array2 value);
  // Leaf that never receives a gradient.
  Var constant(Array2 value);

  Var add_node(std::string op, Array2 value, std::vector<Var> parents, BackwardRule rule);

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  // Requires a 1x1 root. Nodes with no path to root get zero gradients.
  Gradients backward(const Var& root) const;

 private:
  std::vector<Node> nodes_;
};

// ---- op suite -------------------------------------------------------------
// Every op checks shapes and throws ShapeError naming the op and operands.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
// a[r x c] + bias[1 x c] on every row.
Var add_row(const Var& a, const Var& bias);
Var transpose(const Var& a);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var swish(const Var& a);  // x * sigmoid(x)
// Elementwise log(exp(a) + exp(b)).
Var log_add_exp(const Var& a, const Var& b);

Var row_softmax(const Var& a);
Var log_softmax(const Var& a);
// Per-row normalization to zero mean / unit variance, then gain*x + bias.
// gain and bias are 1 x cols.
Var layer_norm(const Var& x, const Var& gain, const Var& bias);
inline constexpr double kLayerNormEps = 1e-5;
// Each row divided by its Euclidean norm. Throws InvalidInput on a zero row.
Var l2_normalize_rows(const Var& a);

Var row_slice(const Var& a, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);
// out[:, j] = a[:, indices[j]]; repeated indices allowed.
Var gather_cols(const Var& a, std::span<const std::size_t> indices);
// out[i, :] = a[indices[i], :]
Var gather_rows(const Var& a, std::span<const std::size_t> indices);

Var reduce_sum(const Var& a);
Var reduce_mean(const Var& a);

// Sliding windows along the row (time) axis: output row t is the
// concatenation of input rows t*stride - pad .. t*stride - pad + kernel - 1,
// zeros outside the input. Shape [T_out x kernel*cols] with
// T_out = (T + 2*pad - kernel) / stride + 1.
Var unfold_time(const Var& x, std::size_t kernel, std::size_t stride, std::size_t pad);
// Per-channel convolution along time with "same" zero padding.
// kernel is [K x cols] with K odd.
Var depthwise_conv_time(const Var& x, const Var& kernel);

}  // namespace otkt::ad
