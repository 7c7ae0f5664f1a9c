#pragma once

#include <vector>

#include "rwmlab/tape.hpp"

namespace rwmlab {

// Adaptive-moment optimizer with decoupled weight decay. Moments are keyed by
// position in the parameter list, which therefore must stay stable across
// steps.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, double lr, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();

  double lr() const { return lr_; }
  void set_lr(double lr);

  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Array> m_, v_;
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
};

}  // namespace rwmlab
