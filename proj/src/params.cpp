#include "otkt/params.hpp"

#include "otkt/error.hpp"

namespace otkt {

std::size_t ParamSet::add(std::string name, Array2 init) {
  if (find(name)) throw InvalidInput("ParamSet: duplicate parameter '" + name + "'");
  entries_.push_back({std::move(name), std::move(init)});
  return entries_.size() - 1;
}

std::optional<std::size_t> ParamSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  return std::nullopt;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

ad::Var Binding::operator[](std::size_t index) {
  auto& slot = vars_.at(index);
  if (!slot) slot = graph_->leaf((*params_)[index].value);
  return *slot;
}

std::vector<Array2> Binding::gradients(const ad::Gradients& grads) const {
  std::vector<Array2> out;
  out.reserve(vars_.size());
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    if (vars_[i]) {
      out.push_back(grads.of(*vars_[i]));
    } else {
      const Array2& v = (*params_)[i].value;
      out.emplace_back(v.rows(), v.cols());
    }
  }
  return out;
}

}  // namespace otkt
