#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "toothdet/autodiff/params.hpp"

namespace toothdet::ad {

struct SgdConfig {
  double lr = 0.01;
};

struct AdamConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Applies one update to every trainable parameter in the list, then zeroes
/// its gradient. A trainable parameter whose gradient was never populated by
/// a backward sweep is rejected: that always means the training loop wired
/// the loss wrong. Frozen parameters are skipped.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  void step(const std::vector<NamedParam>& params);
  void step(ParamStore& params) { step(params.entries()); }

 protected:
  virtual void begin_step() {}
  virtual void update(Node& p) = 0;
};

class Sgd : public Optimizer {
 public:
  explicit Sgd(SgdConfig cfg) : cfg_(cfg) {}

 protected:
  void update(Node& p) override;

 private:
  SgdConfig cfg_;
};

/// Adam with bias correction; the step counter is shared across parameters
/// and increments once per step() call.
class Adam : public Optimizer {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

 protected:
  void begin_step() override { ++t_; }
  void update(Node& p) override;

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::unordered_map<Node*, std::pair<Tensor, Tensor>> state_;  // m, v
};

}  // namespace toothdet::ad
