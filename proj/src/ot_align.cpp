#include "otkt/ot_align.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>

#include "otkt/error.hpp"
#include "otkt/simd/kernels.hpp"

namespace otkt::ot {
namespace {

std::atomic<std::uint64_t> g_calls{0};
std::atomic<std::uint64_t> g_iterations{0};

void check_nonzero_rows(const Array2& m, const char* which) {
  const auto& k = simd::active();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (!(k.dot(m.row(r).data(), m.row(r).data(), m.cols()) > 0.0)) {
      throw InvalidInput(std::string("cosine_cost: row ") + std::to_string(r) + " of " + which +
                         " has zero norm; cosine is undefined");
    }
  }
}

void check_marginal(const std::vector<double>& m, std::size_t expect, const char* which) {
  if (m.size() != expect) {
    throw ShapeError(std::string("sinkhorn: ") + which + " marginal has " +
                     std::to_string(m.size()) + " entries, cost needs " + std::to_string(expect));
  }
  double sum = 0.0;
  for (double v : m) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw InvalidInput(std::string("sinkhorn: ") + which + " marginal must be strictly positive");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw InvalidInput(std::string("sinkhorn: ") + which + " marginal sums to " +
                       std::to_string(sum));
  }
}

// log sum_j exp(v_j)
double log_sum_exp(const std::vector<double>& v) {
  const double m = simd::active().max_reduce(v.data(), v.size());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

std::vector<double> uniform_marginal(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

Array2 cosine_cost(const Array2& z, const Array2& h) {
  if (z.cols() != h.cols()) {
    throw ShapeError("cosine_cost: " + z.shape_string() + " vs " + h.shape_string());
  }
  check_nonzero_rows(z, "Z");
  check_nonzero_rows(h, "H");
  const auto& k = simd::active();
  std::vector<double> zn(z.rows()), hn(h.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) zn[i] = std::sqrt(k.dot(z.row(i).data(), z.row(i).data(), z.cols()));
  for (std::size_t j = 0; j < h.rows(); ++j) hn[j] = std::sqrt(k.dot(h.row(j).data(), h.row(j).data(), h.cols()));
  Array2 out = matmul_nt(z, h);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) {
      const double c = std::clamp(out(i, j) / (zn[i] * hn[j]), -1.0, 1.0);
      out(i, j) = 1.0 - c;
    }
  return out;
}

ad::Var cosine_cost(const ad::Var& z, const ad::Var& h) {
  if (z.cols() != h.cols()) {
    throw ShapeError("cosine_cost: " + z.value().shape_string() + " vs " +
                     h.value().shape_string());
  }
  check_nonzero_rows(z.value(), "Z");
  check_nonzero_rows(h.value(), "H");
  const ad::Var cos = ad::matmul(ad::l2_normalize_rows(z), ad::transpose(ad::l2_normalize_rows(h)));
  return ad::add_scalar(ad::scale(cos, -1.0), 1.0);
}

double entropy(const Array2& gamma) {
  double h = 0.0;
  for (double v : gamma.flat()) {
    if (v > 0.0) h -= v * (std::log(v) - 1.0);
  }
  return h;
}

EotResult sinkhorn(const Array2& cost, const std::vector<double>& row_marginal,
                   const std::vector<double>& col_marginal, const SinkhornOptions& opts) {
  if (!(opts.alpha > 0.0)) throw InvalidInput("sinkhorn: alpha must be positive");
  if (!(opts.tol > 0.0)) throw InvalidInput("sinkhorn: tol must be positive");
  if (cost.empty()) throw ShapeError("sinkhorn: empty cost matrix " + cost.shape_string());
  if (!cost.all_finite()) throw InvalidInput("sinkhorn: cost matrix has non-finite entries");
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();
  check_marginal(row_marginal, n, "row");
  check_marginal(col_marginal, m, "column");
  g_calls.fetch_add(1, std::memory_order_relaxed);

  const double alpha = opts.alpha;
  std::vector<double> log_a(n), log_b(m);
  for (std::size_t i = 0; i < n; ++i) log_a[i] = std::log(row_marginal[i]);
  for (std::size_t j = 0; j < m; ++j) log_b[j] = std::log(col_marginal[j]);

  // dual potentials; gamma_ij = exp((f_i + g_j - C_ij) / alpha)
  std::vector<double> f(n, 0.0), g(m, 0.0);
  std::vector<double> row_buf(m), col_buf(n);
  const Array2 cost_t = cost.transposed();

  EotResult result;
  result.alpha = alpha;
  double violation = std::numeric_limits<double>::infinity();
  std::size_t it = 0;
  while (it < opts.max_iter) {
    ++it;
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = cost.row(i);
      for (std::size_t j = 0; j < m; ++j) row_buf[j] = (g[j] - c[j]) / alpha;
      f[i] = alpha * (log_a[i] - log_sum_exp(row_buf));
    }
    for (std::size_t j = 0; j < m; ++j) {
      const auto c = cost_t.row(j);
      for (std::size_t i = 0; i < n; ++i) col_buf[i] = (f[i] - c[i]) / alpha;
      g[j] = alpha * (log_b[j] - log_sum_exp(col_buf));
    }
    // columns are exact after the g update; rows carry the residual
    violation = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = cost.row(i);
      for (std::size_t j = 0; j < m; ++j) row_buf[j] = (f[i] + g[j] - c[j]) / alpha;
      violation = std::max(violation, std::abs(std::exp(log_sum_exp(row_buf)) - row_marginal[i]));
    }
    if (violation <= opts.tol) break;
  }
  g_iterations.fetch_add(it, std::memory_order_relaxed);

  Array2 gamma(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) gamma(i, j) = std::exp((f[i] + g[j] - cost(i, j)) / alpha);

  double transport = 0.0;
  for (std::size_t k = 0; k < gamma.size(); ++k) transport += gamma.flat()[k] * cost.flat()[k];
  result.entropy = entropy(gamma);
  result.transport_cost = transport;
  result.eot_loss = transport - alpha * result.entropy;
  result.iterations_used = it;
  result.converged = violation <= opts.tol;
  result.coupling = Coupling{std::move(gamma), row_marginal, col_marginal};
  return result;
}

EotResult sinkhorn(const Array2& cost, const SinkhornOptions& opts) {
  return sinkhorn(cost, uniform_marginal(cost.rows()), uniform_marginal(cost.cols()), opts);
}

Array2 project(const Coupling& coupling, const Array2& h) {
  if (coupling.gamma.cols() != h.rows()) {
    throw ShapeError("project: coupling " + coupling.gamma.shape_string() + " x H " +
                     h.shape_string());
  }
  return matmul(coupling.gamma, h);
}

ad::Var project(const Coupling& coupling, const ad::Var& h) {
  if (coupling.gamma.cols() != h.rows()) {
    throw ShapeError("project: coupling " + coupling.gamma.shape_string() + " x H " +
                     h.value().shape_string());
  }
  return ad::matmul(h.graph()->constant(coupling.gamma), h);
}

double alignment_loss(const Array2& z, const Array2& z_tilde) {
  ad::Graph g;
  return alignment_loss(g.constant(z), g.constant(z_tilde)).item();
}

ad::Var alignment_loss(const ad::Var& z, const ad::Var& z_tilde) {
  if (!z.value().same_shape(z_tilde.value())) {
    throw ShapeError("alignment_loss: " + z.value().shape_string() + " vs " +
                     z_tilde.value().shape_string());
  }
  const std::size_t t = z.rows();
  if (t < 3) {
    throw InvalidInput("alignment_loss: need at least 3 text positions (CLS, token, SEP), got " +
                       std::to_string(t));
  }
  const ad::Var zi = ad::l2_normalize_rows(ad::row_slice(z, 1, t - 1));
  const ad::Var zti = ad::l2_normalize_rows(ad::row_slice(z_tilde, 1, t - 1));
  const ad::Var cos_sum = ad::reduce_sum(ad::mul(zi, zti));
  return ad::add_scalar(ad::scale(cos_sum, -1.0), static_cast<double>(t - 2));
}

ad::Var eot_loss(const ad::Var& cost, const EotResult& solved) {
  const Array2& gamma = solved.coupling.gamma;
  if (!gamma.same_shape(cost.value())) {
    throw ShapeError("eot_loss: coupling " + gamma.shape_string() + " vs cost " +
                     cost.value().shape_string());
  }
  const ad::Var transport = ad::reduce_sum(ad::mul(cost.graph()->constant(gamma), cost));
  return ad::add_scalar(transport, -solved.alpha * solved.entropy);
}

SinkhornCounters sinkhorn_counters() {
  return {g_calls.load(std::memory_order_relaxed), g_iterations.load(std::memory_order_relaxed)};
}

void reset_sinkhorn_counters() {
  g_calls.store(0, std::memory_order_relaxed);
  g_iterations.store(0, std::memory_order_relaxed);
}

}  // namespace otkt::ot
