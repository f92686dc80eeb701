#pragma once

#include <vector>

#include "rpalab/autodiff.hpp"

namespace rpalab {

/// Adaptive moments with decoupled weight decay. Decay applies to parameters flagged
/// `decay` with rank >= 2; weight_decay = 0 gives plain Adam.
class AdamW {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW(std::vector<Parameter*> params, Options opt);

  void zero_grad();
  void step();
  void set_lr(double lr) { opt_.lr = lr; }
  double lr() const { return opt_.lr; }
  std::size_t steps() const { return t_; }
  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  Options opt_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace rpalab
