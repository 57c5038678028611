#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "otkt/array2.hpp"
#include "otkt/autodiff.hpp"

namespace otkt {

struct NamedArray {
  std::string name;
  Array2 value;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

// Ordered, named collection of trainable arrays. Indices are stable for the
// lifetime of the set.
class ParamSet {
 public:
  std::size_t add(std::string name, Array2 init);

  std::size_t size() const { return entries_.size(); }
  const NamedArray& operator[](std::size_t i) const { return entries_.at(i); }
  Array2& value(std::size_t i) { return entries_.at(i).value; }
  const Array2& value(std::size_t i) const { return entries_.at(i).value; }
  const std::vector<NamedArray>& entries() const { return entries_; }

  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t scalar_count() const;

 private:
  std::vector<NamedArray> entries_;
};

// Lazily exposes a ParamSet to one graph: each parameter becomes a leaf the
// first time it is used, so unused parameters cost nothing and get no
// gradient.
class Binding {
 public:
  Binding(ad::Graph& graph, const ParamSet& params)
      : graph_(&graph), params_(&params), vars_(params.size()) {}

  ad::Var operator[](std::size_t index);
  ad::Graph& graph() { return *graph_; }

  // Gradient for every parameter, zeros for the ones never bound.
  std::vector<Array2> gradients(const ad::Gradients& grads) const;

 private:
  ad::Graph* graph_;
  const ParamSet* params_;
  std::vector<std::optional<ad::Var>> vars_;
};

}  // namespace otkt
