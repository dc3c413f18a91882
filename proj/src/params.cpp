#include "toothdet/autodiff/params.hpp"

#include <stdexcept>
#include <utility>

namespace toothdet::ad {

Var ParamStore::add(const std::string& name, Tensor init, bool trainable) {
  if (find(name) != nullptr)
    throw std::invalid_argument("duplicate parameter name: " + name);
  Var v(std::move(init), trainable);
  entries_.push_back({name, v});
  return v;
}

const Var* ParamStore::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e.var;
  return nullptr;
}

std::vector<Var> ParamStore::trainable() const {
  std::vector<Var> out;
  for (const auto& e : entries_)
    if (e.var.requires_grad()) out.push_back(e.var);
  return out;
}

void ParamStore::zero_grads() {
  for (auto& e : entries_)
    if (e.var.requires_grad()) e.var.node()->zero_grad();
}

}  // namespace toothdet::ad
