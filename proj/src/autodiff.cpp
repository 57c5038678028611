#include "otkt/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "otkt/error.hpp"
#include "otkt/simd/kernels.hpp"

namespace otkt::ad {

const Array2& Var::value() const { return graph_->node(id_).value; }

double Var::item() const {
  const Array2& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("item: node is " + v.shape_string());
  return v(0, 0);
}

Var Graph::leaf(Array2 value) {
  nodes_.push_back(Node{std::move(value), {}, "leaf", nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Array2 value) {
  nodes_.push_back(Node{std::move(value), {}, "constant", nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Graph::add_node(std::string op, Array2 value, std::vector<Var> parents,
                    BackwardRule rule) {
  Node n;
  n.value = std::move(value);
  n.op = std::move(op);
  n.backward = std::move(rule);
  n.parents.reserve(parents.size());
  for (const Var& p : parents) {
    if (p.graph() != this) throw Error(n.op + ": operand belongs to another graph");
    n.parents.push_back(p.id());
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Gradients Graph::backward(const Var& root) const {
  if (root.graph() != this) throw Error("backward: root belongs to another graph");
  const Array2& rv = nodes_.at(root.id()).value;
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw ShapeError("backward: root must be [1x1], got " + rv.shape_string());
  }
  std::vector<Array2> grads(nodes_.size());
  std::vector<bool> reached(nodes_.size(), false);
  grads[root.id()] = Array2(1, 1, 1.0);
  reached[root.id()] = true;

  std::vector<Array2*> parent_grads;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!reached[id] || !n.requires_grad || !n.backward) continue;
    parent_grads.assign(n.parents.size(), nullptr);
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      const std::size_t pid = n.parents[k];
      if (!nodes_[pid].requires_grad) continue;
      if (!reached[pid]) {
        grads[pid] = Array2(nodes_[pid].value.rows(), nodes_[pid].value.cols());
        reached[pid] = true;
      }
      parent_grads[k] = &grads[pid];
    }
    n.backward(grads[id], n.value, parent_grads);
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (!reached[id]) grads[id] = Array2(nodes_[id].value.rows(), nodes_[id].value.cols());
  }
  return Gradients(std::move(grads));
}

namespace {

void accumulate(Array2* dst, const Array2& src, double alpha = 1.0) {
  if (dst == nullptr) return;
  simd::active().axpy(alpha, src.data(), dst->data(), src.size());
}

Graph& graph_of(const Var& a) { return *a.graph(); }

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError(std::string(op) + ": " + a.value().shape_string() + " vs " +
                     b.value().shape_string());
  }
}

template <class F>
Array2 map(const Array2& in, F f) {
  Array2 out(in.rows(), in.cols());
  for (std::size_t i = 0; i < in.size(); ++i) out.flat()[i] = f(in.flat()[i]);
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.value().shape_string() + " x " + b.value().shape_string());
  }
  return graph_of(a).add_node(
      "matmul", otkt::matmul(a.value(), b.value()), {a, b},
      [a, b](const Array2& g, const Array2&, std::span<Array2* const> pg) {
        if (pg[0]) accumulate(pg[0], matmul_nt(g, b.value()));
        if (pg[1]) accumulate(pg[1], matmul_tn(a.value(), g));
      });
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Array2 out = a.value();
  simd::active().axpy(1.0, b.value().data(), out.data(), out.size());
  return graph_of(a).add_node("add", std::move(out), {a, b},
                              [](const Array2& g, const Array2&, std::span<Array2* const> pg) {
                                accumulate(pg[0], g);
                                accumulate(pg[1], g);
                              });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Array2 out = a.value();
  simd::active().axpy(-1.0, b.value().data(), out.data(), out.size());
  return graph_of(a).add_node("sub", std::move(out), {a, b},
                              [](const Array2& g, const Array2&, std::span<Array2* const> pg) {
                                accumulate(pg[0], g);
                                accumulate(pg[1], g, -1.0);
                              });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Array2 out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.flat()[i] = a.value().flat()[i] * b.value().flat()[i];
  return graph_of(a).add_node(
      "mul", std::move(out), {a, b},
      [a, b](const Array2& g, const Array2&, std::span<Array2* const> pg) {
        for (int side = 0; side < 2; ++side) {
          Array2* dst = pg[side];
          if (!dst) continue;
          const Array2& other = side == 0 ? b.value() : a.value();
          for (std::size_t i = 0; i < g.size(); ++i) dst->flat()[i] += g.flat()[i] * other.flat()[i];
        }
      });
}

Var scale(const Var& a, double s) {
  return graph_of(a).add_node("scale", map(a.value(), [s](double x) { return s * x; }), {a},
                              [s](const Array2& g, const Array2&, std::span<Array2* const> pg) {
                                accumulate(pg[0], g, s);
                              });
}

Var add_scalar(const Var& a, double s) {
  return graph_of(a).add_node("add_scalar", map(a.value(), [s](double x) { return x + s; }),
                              {a}, [](const Array2& g, const Array2&, std::span<Array2* const> pg) {
                                accumulate(pg[0], g);
                              });
}

Var add_row(const Var& a, const Var& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("add_row: " + a.value().shape_string() + " + " +
                     bias.value().shape_string());
  }
  Array2 out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    simd::active().axpy(1.0, bias.value().data(), out.row(r).data(), out.cols());
  return graph_of(a).add_node(
      "add_row", std::move(out), {a, bias},
      [](const Array2& g, const Array2&, std::span<Array2* const> pg) {
        accumulate(pg[0], g);
        if (pg[1]) {
          for (std::size_t r = 0; r < g.rows(); ++r)
            simd::active().axpy(1.0, g.row(r).data(), pg[1]->data(), g.cols());
        }
      });
}

Var transpose(const Var& a) {
  return graph_of(a).add_node("transpose", a.value().transposed(), {a},
                              [](const Array2& g, const Array2&, std::span<Array2* const> pg) {
                                accumulate(pg[0], g.transposed());
                              });
}

Var relu(const Var& a) {
  return graph_of(a).add_node(
      "relu", map(a.value(), [](double x) { return x > 0 ? x : 0.0; }), {a},
      [a](const Array2& g, const Array2&, std::span<Array2* const> pg) {
        if (!pg[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (a.value().flat()[i] > 0) pg[0]->flat()[i] += g.flat()[i];
      });
}

Var sigmoid(const Var& a) {
  return graph_of(a).add_node("sigmoid", map(a.value(), stable_sigmoid), {a},
                              [](const Array2& g, const Array2& y, std::span<Array2* const> pg) {
                                if (!pg[0]) return;
                                for (std::size_t i = 0; i < g.size(); ++i) {
                                  const double s = y.flat()[i];
                                  pg[0]->flat()[i] += g.flat()[i] * s * (1.0 - s);
                                }
                              });
}

Var swish(const Var& a) {
  return graph_of(a).add_node(
      "swish", map(a.value(), [](double x) { return x * stable_sigmoid(x); }), {a},
      [a](const Array2& g, const Array2&, std::span<Array2* const> pg) {
        if (!pg[0]) return;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double x = a.value().flat()[i];
          const double s = stable_sigmoid(x);
          pg[0]->flat()[i] += g.flat()[i] * (s + x * s * (1.0 - s));
        }
      });
}

Var log_add_exp(const Var& a, const Var& b) {
  require_same_shape("log_add_exp", a, b);
  Array2 out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.value().flat()[i];
    const double y = b.value().flat()[i];
    const double m = std::max(x, y);
    out.flat()[i] = m + std::log1p(std::exp(-std::abs(x - y)));
  }
  return graph_of(a).add_node(
      "log_add_exp", std::move(out), {a, b},
      [a, b](const Array2& g, const Array2& y, std::span<Array2* const> pg) {
        for (int side = 0; side < 2; ++side) {
          Array2* dst = pg[side];
          if (!dst) continue;
          const Array2& in = side == 0 ? a.value() : b.value();
          for (std::size_t i = 0; i < g.size(); ++i)
            dst->flat()[i] += g.flat()[i] * std::exp(in.flat()[i] - y.flat()[i]);
        }
      });
}

Var row_softmax(const Var& a) {
  const Array2& x = a.value();
  Array2 out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double m = simd::active().max_reduce(x.row(r).data(), x.cols());
    double z = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) z += (out(r, c) = std::exp(x(r, c) - m));
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) /= z;
  }
  return graph_of(a).add_node(
      "row_softmax", std::move(out), {a},
      [](const Array2& g, const Array2& y, std::span<Array2* const> pg) {
        if (!pg[0]) return;
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const double dotgy = simd::active().dot(g.row(r).data(), y.row(r).data(), y.cols());
          for (std::size_t c = 0; c < y.cols(); ++c)
            (*pg[0])(r, c) += y(r, c) * (g(r, c) - dotgy);
        }
      });
}

Var log_softmax(const Var& a) {
  const Array2& x = a.value();
  Array2 out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double m = simd::active().max_reduce(x.row(r).data(), x.cols());
    double z = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) z += std::exp(x(r, c) - m);
    const double lse = m + std::log(z);
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) - lse;
  }
  return graph_of(a).add_node(
      "log_softmax", std::move(out), {a},
      [](const Array2& g, const Array2& y, std::span<Array2* const> pg) {
        if (!pg[0]) return;
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double gsum = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) gsum += g(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c)
            (*pg[0])(r, c) += g(r, c) - std::exp(y(r, c)) * gsum;
        }
      });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias) {
  const Array2& in = x.value();
  const std::size_t n = in.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw ShapeError("layer_norm: " + in.shape_string() + " with gain " +
                     gain.value().shape_string() + " and bias " + bias.value().shape_string());
  }
  // normalized rows and inverse std, kept for the backward pass
  Array2 xhat(in.rows(), n);
  std::vector<double> inv_std(in.rows());
  Array2 out(in.rows(), n);
  for (std::size_t r = 0; r < in.rows(); ++r) {
    double mean = 0.0;
    for (double v : in.row(r)) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : in.row(r)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (in(r, c) - mean) * inv_std[r];
      out(r, c) = gain.value()(0, c) * xhat(r, c) + bias.value()(0, c);
    }
  }
  return graph_of(x).add_node(
      "layer_norm", std::move(out), {x, gain, bias},
      [gain, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Array2& g, const Array2&, std::span<Array2* const> pg) {
        const std::size_t cols = g.cols();
        const double inv_n = 1.0 / static_cast<double>(cols);
        std::vector<double> dxhat(cols);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          if (pg[1] || pg[2]) {
            for (std::size_t c = 0; c < cols; ++c) {
              if (pg[1]) pg[1]->flat()[c] += g(r, c) * xhat(r, c);
              if (pg[2]) pg[2]->flat()[c] += g(r, c);
            }
          }
          if (!pg[0]) continue;
          double mean_d = 0.0;
          double mean_dx = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            dxhat[c] = g(r, c) * gain.value()(0, c);
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xhat(r, c);
          }
          mean_d *= inv_n;
          mean_dx *= inv_n;
          for (std::size_t c = 0; c < cols; ++c)
            (*pg[0])(r, c) += inv_std[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
        }
      });
}

Var l2_normalize_rows(const Var& a) {
  const Array2& x = a.value();
  Array2 out(x.rows(), x.cols());
  std::vector<double> norms(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    norms[r] = std::sqrt(simd::active().dot(x.row(r).data(), x.row(r).data(), x.cols()));
    if (!(norms[r] > 0.0)) {
      throw InvalidInput("l2_normalize_rows: row " + std::to_string(r) +
                         " has zero norm; cosine is undefined");
    }
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) / norms[r];
  }
  return graph_of(a).add_node(
      "l2_normalize_rows", std::move(out), {a},
      [norms = std::move(norms)](const Array2& g, const Array2& y, std::span<Array2* const> pg) {
        if (!pg[0]) return;
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const double dotgy = simd::active().dot(g.row(r).data(), y.row(r).data(), y.cols());
          for (std::size_t c = 0; c < y.cols(); ++c)
            (*pg[0])(r, c) += (g(r, c) - y(r, c) * dotgy) / norms[r];
        }
      });
}

Var row_slice(const Var& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.rows()) {
    throw ShapeError("row_slice: rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") of " + a.value().shape_string());
  }
  const std::size_t cols = a.cols();
  Array2 out(end - begin, cols);
  std::copy(a.value().data() + begin * cols, a.value().data() + end * cols, out.data());
  return graph_of(a).add_node(
      "row_slice", std::move(out), {a},
      [begin, cols](const Array2& g, const Array2&, std::span<Array2* const> pg) {
        if (pg[0]) simd::active().axpy(1.0, g.data(), pg[0]->data() + begin * cols, g.size());
      });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: " + parts[0].value().shape_string() + " vs " +
                       p.value().shape_string());
    }
    rows += p.rows();
  }
  Array2 out(rows, cols);
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const Var& p : parts) {
    offsets.push_back(at);
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + at * cols);
    at += p.rows();
  }
  return graph_of(parts[0]).add_node(
      "concat_rows", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
      [offsets = std::move(offsets), cols](const Array2& g, const Array2&,
                                           std::span<Array2* const> pg) {
        for (std::size_t k = 0; k < pg.size(); ++k) {
          if (!pg[k]) continue;
          simd::active().axpy(1.0, g.data() + offsets[k] * cols, pg[k]->data(), pg[k]->size());
        }
      });
}

Var gather_cols(const Var& a, std::span<const std::size_t> indices) {
  for (std::size_t j : indices) {
    if (j >= a.cols()) {
      throw ShapeError("gather_cols: column " + std::to_string(j) + " of " +
                       a.value().shape_string());
    }
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Array2 out(a.rows(), idx.size());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t j = 0; j < idx.size(); ++j) out(r, j) = a.value()(r, idx[j]);
  return graph_of(a).add_node(
      "gather_cols", std::move(out), {a},
      [idx = std::move(idx)](const Array2& g, const Array2&, std::span<Array2* const> pg) {
        if (!pg[0]) return;
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t j = 0; j < idx.size(); ++j) (*pg[0])(r, idx[j]) += g(r, j);
      });
}

Var gather_rows(const Var& a, std::span<const std::size_t> indices) {
  for (std::size_t i : indices) {
    if (i >= a.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(i) + " of " +
                       a.value().shape_string());
    }
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Array2 out(idx.size(), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(a.value().row(idx[i]).begin(), a.value().row(idx[i]).end(), out.row(i).begin());
  return graph_of(a).add_node(
      "gather_rows", std::move(out), {a},
      [idx = std::move(idx)](const Array2& g, const Array2&, std::span<Array2* const> pg) {
        if (!pg[0]) return;
        for (std::size_t i = 0; i < idx.size(); ++i)
          simd::active().axpy(1.0, g.row(i).data(), pg[0]->row(idx[i]).data(), g.cols());
      });
}

Var reduce_sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().flat()) s += v;
  return graph_of(a).add_node("reduce_sum", Array2(1, 1, s), {a},
                              [](const Array2& g, const Array2&, std::span<Array2* const> pg) {
                                if (!pg[0]) return;
                                for (double& v : pg[0]->flat()) v += g(0, 0);
                              });
}

Var reduce_mean(const Var& a) {
  if (a.value().empty()) throw ShapeError("reduce_mean: empty operand");
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().flat()) s += v;
  return graph_of(a).add_node("reduce_mean", Array2(1, 1, s / n), {a},
                              [n](const Array2& g, const Array2&, std::span<Array2* const> pg) {
                                if (!pg[0]) return;
                                for (double& v : pg[0]->flat()) v += g(0, 0) / n;
                              });
}

Var unfold_time(const Var& x, std::size_t kernel, std::size_t stride, std::size_t pad) {
  const std::size_t t_in = x.rows();
  const std::size_t cols = x.cols();
  if (kernel == 0 || stride == 0 || t_in + 2 * pad < kernel) {
    throw ShapeError("unfold_time: kernel " + std::to_string(kernel) + " stride " +
                     std::to_string(stride) + " pad " + std::to_string(pad) + " over " +
                     x.value().shape_string());
  }
  const std::size_t t_out = (t_in + 2 * pad - kernel) / stride + 1;
  Array2 out(t_out, kernel * cols);
  for (std::size_t t = 0; t < t_out; ++t) {
    for (std::size_t k = 0; k < kernel; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k) -
                                 static_cast<std::ptrdiff_t>(pad);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_in)) continue;
      const auto row = x.value().row(static_cast<std::size_t>(src));
      std::copy(row.begin(), row.end(), out.row(t).begin() + k * cols);
    }
  }
  return graph_of(x).add_node(
      "unfold_time", std::move(out), {x},
      [kernel, stride, pad, t_in, cols](const Array2& g, const Array2&,
                                        std::span<Array2* const> pg) {
        if (!pg[0]) return;
        for (std::size_t t = 0; t < g.rows(); ++t) {
          for (std::size_t k = 0; k < kernel; ++k) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k) -
                                       static_cast<std::ptrdiff_t>(pad);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_in)) continue;
            simd::active().axpy(1.0, g.row(t).data() + k * cols,
                                pg[0]->row(static_cast<std::size_t>(src)).data(), cols);
          }
        }
      });
}

Var depthwise_conv_time(const Var& x, const Var& kernel) {
  const std::size_t k_len = kernel.rows();
  if (kernel.cols() != x.cols() || k_len % 2 == 0) {
    throw ShapeError("depthwise_conv_time: input " + x.value().shape_string() + " kernel " +
                     kernel.value().shape_string() + " (kernel rows must be odd)");
  }
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k_len / 2);
  const std::ptrdiff_t t_len = static_cast<std::ptrdiff_t>(x.rows());
  const std::size_t cols = x.cols();
  const Array2& in = x.value();
  const Array2& w = kernel.value();
  Array2 out(x.rows(), cols);
  for (std::ptrdiff_t t = 0; t < t_len; ++t) {
    for (std::size_t k = 0; k < k_len; ++k) {
      const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(k) - half;
      if (src < 0 || src >= t_len) continue;
      for (std::size_t c = 0; c < cols; ++c)
        out(static_cast<std::size_t>(t), c) += in(static_cast<std::size_t>(src), c) * w(k, c);
    }
  }
  return graph_of(x).add_node(
      "depthwise_conv_time", std::move(out), {x, kernel},
      [x, kernel, half, t_len, cols](const Array2& g, const Array2&, std::span<Array2* const> pg) {
        const Array2& in = x.value();
        const Array2& w = kernel.value();
        for (std::ptrdiff_t t = 0; t < t_len; ++t) {
          const auto tt = static_cast<std::size_t>(t);
          for (std::size_t k = 0; k < w.rows(); ++k) {
            const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(k) - half;
            if (src < 0 || src >= t_len) continue;
            const auto ss = static_cast<std::size_t>(src);
            for (std::size_t c = 0; c < cols; ++c) {
              if (pg[0]) (*pg[0])(ss, c) += g(tt, c) * w(k, c);
              if (pg[1]) (*pg[1])(k, c) += g(tt, c) * in(ss, c);
            }
          }
        }
      });
}

}  // namespace otkt::ad
