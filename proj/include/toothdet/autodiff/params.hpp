#pragma once

#include <string>
#include <vector>

#include "toothdet/autodiff/graph.hpp"

namespace toothdet::ad {

struct NamedParam {
  std::string name;
  Var var;
};

/// Ordered registry of named parameter leaves. Names are unique; order is
/// registration order and fixed, which keeps optimizer sweeps and checkpoint
/// layout deterministic. Frozen parameters (trainable = false) keep their
/// values but never receive gradient and are skipped by the optimizer and by
/// weight regularization.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init, bool trainable = true);

  const std::vector<NamedParam>& entries() const { return entries_; }
  const Var* find(const std::string& name) const;
  std::vector<Var> trainable() const;
  void zero_grads();
  int count() const { return static_cast<int>(entries_.size()); }

 private:
  std::vector<NamedParam> entries_;
};

}  // namespace toothdet::ad
