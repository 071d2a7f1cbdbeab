#pragma once

#include <cstddef>
#include <vector>

#include "flatlora/tensor.hpp"

namespace flatlora {

struct OptimConfig {
  enum class Kind { adamw, sgd };
  Kind kind = Kind::adamw;
  double lr = 1e-3;
  double weight_decay = 0.01;  // decoupled, applied to the parameter directly
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;         // sgd only
  bool cosine_decay = false;     // lr_t = lr·(1+cos(πt/T))/2
  std::size_t total_steps = 0;   // horizon for cosine decay
};

class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, OptimConfig config);

  void step();       // reads grads (absent grad = zero), updates parameters
  void zero_grad();  // clears grads on all owned parameters

  std::size_t steps_taken() const { return t_; }
  double current_lr() const;  // rate the next step() will use
  const OptimConfig& config() const { return config_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  OptimConfig config_;
  std::vector<std::vector<double>> m_;  // adamw first moment / sgd momentum
  std::vector<std::vector<double>> v_;  // adamw second moment
  std::size_t t_ = 0;
};

}  // namespace flatlora
