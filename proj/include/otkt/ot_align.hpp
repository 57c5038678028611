#pragma once

// Cross-modal alignment through entropy-regularized optimal transport:
// cosine cost between text and acoustic rows, a log-domain Sinkhorn solver
// for the coupling, projection of acoustic rows through the coupling, and
// the cosine alignment loss over interior (non-CLS/SEP) text positions.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "otkt/array2.hpp"
#include "otkt/autodiff.hpp"

namespace otkt::ot {

struct Coupling {
  Array2 gamma;  // T_t x T_a
  std::vector<double> row_marginal;
  std::vector<double> col_marginal;
};

struct EotResult {
  Coupling coupling;
  double transport_cost = 0.0;  // <gamma, C>
  double entropy = 0.0;         // H(gamma)
  double eot_loss = 0.0;        // transport_cost - alpha * entropy
  double alpha = 0.0;
  std::size_t iterations_used = 0;
  bool converged = false;
};

struct SinkhornOptions {
  double alpha = 0.2;
  std::size_t max_iter = 1000;
  double tol = 1e-6;
};

std::vector<double> uniform_marginal(std::size_t n);

// C[i][j] = 1 - cos(z_i, h_j). Throws InvalidInput naming the first
// zero-norm row.
Array2 cosine_cost(const Array2& z, const Array2& h);
ad::Var cosine_cost(const ad::Var& z, const ad::Var& h);

// H(gamma) = -sum gamma_ij (log gamma_ij - 1), with 0 log 0 = 0.
double entropy(const Array2& gamma);

// Log-domain Sinkhorn. Exhausting max_iter returns converged = false.
EotResult sinkhorn(const Array2& cost, const std::vector<double>& row_marginal,
                   const std::vector<double>& col_marginal, const SinkhornOptions& opts);
// Uniform marginals.
EotResult sinkhorn(const Array2& cost, const SinkhornOptions& opts);

// gamma * H. The coupling enters the graph as a constant, so gradients
// reach H only.
Array2 project(const Coupling& coupling, const Array2& h);
ad::Var project(const Coupling& coupling, const ad::Var& h);

// sum over interior rows i = 2..T_t-1 (1-based) of 1 - cos(z_i, z~_i).
double alignment_loss(const Array2& z, const Array2& z_tilde);
ad::Var alignment_loss(const ad::Var& z, const ad::Var& z_tilde);

// <gamma*, C> - alpha * H(gamma*) as a graph node; differentiable through
// C only.
ad::Var eot_loss(const ad::Var& cost, const EotResult& solved);

// Process-wide instrumentation.
struct SinkhornCounters {
  std::uint64_t calls = 0;
  std::uint64_t iterations = 0;
};
SinkhornCounters sinkhorn_counters();
void reset_sinkhorn_counters();

}  // namespace otkt::ot
