#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "plankd/tensor.hpp"

namespace plankd::grad {

// Adam with bias correction over a fixed, ordered set of named parameters.
// step() applies one update from the accumulated grads and then clears them.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  void register_param(std::string name, Tensor param);

  void step();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::int64_t step_count() const { return step_count_; }

 private:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m;
    std::vector<double> v;
  };

  double lr_, beta1_, beta2_, epsilon_;
  std::int64_t step_count_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace plankd::grad
