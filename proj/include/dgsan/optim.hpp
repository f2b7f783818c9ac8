#pragma once

#include <vector>

#include "dgsan/tensor.hpp"

namespace dgsan {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam over a fixed list of parameter leaves. step() consumes the current
/// gradients and zeroes them.
class Adam {
 public:
  Adam(std::vector<ad::Var> params, AdamOptions options = {});

  void step();
  long steps_taken() const { return t_; }
  const AdamOptions& options() const { return opts_; }

 private:
  std::vector<ad::Var> params_;
  AdamOptions opts_;
  std::vector<ad::Matrix> m_, v_;
  long t_ = 0;
};

}  // namespace dgsan
