#pragma once

#include <cstddef>
#include <vector>

#include "numerics/tape.hpp"

namespace training {

struct OptimHparams {
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  // 0 disables clipping
  std::size_t warmup_steps = 1000;
  std::size_t total_steps = 20000;  // cosine horizon
  double lr_min_ratio = 0.0;
};

// One decoupled-weight-decay update on a single tensor. t is the 1-based step
// for bias correction; decay multiplies the parameter directly and never
// enters the moment accumulators.
void adamw_step(numerics::Tensor& param, const numerics::Tensor& grad,
                numerics::Tensor& m, numerics::Tensor& v, std::size_t t, double lr,
                const OptimHparams& hp);

// Linear warmup then cosine decay to lr * lr_min_ratio at total_steps.
double lr_schedule(std::size_t step, const OptimHparams& hp);

class AdamW {
 public:
  AdamW(std::vector<numerics::Param*> params, OptimHparams hp);

  // Global-norm clip over all parameter grads; returns the pre-clip norm.
  // Non-finite gradients abort with a diagnostic naming the parameter.
  double clip_gradients(const std::vector<std::string>& names);

  // Applies one update using the schedule; increments the step count.
  void step();

  std::size_t step_count() const { return t_; }
  const OptimHparams& hparams() const { return hp_; }

 private:
  std::vector<numerics::Param*> params_;
  std::vector<numerics::Tensor> m_, v_;
  OptimHparams hp_;
  std::size_t t_ = 0;
};

}  // namespace training
