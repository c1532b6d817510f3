#include "plankd/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace plankd::grad {

Adam::Adam(double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

void Adam::register_param(std::string name, Tensor param) {
  if (!param.requires_grad()) {
    throw std::invalid_argument("adam: parameter '" + name + "' does not require grad");
  }
  Slot s;
  s.name = std::move(name);
  s.param = std::move(param);
  s.m.assign(s.param.numel(), 0.0);
  s.v.assign(s.param.numel(), 0.0);
  slots_.push_back(std::move(s));
}

void Adam::step() {
  ++step_count_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (Slot& s : slots_) {
    const std::vector<double>* g = s.param.grad();
    if (!g || g->size() != s.param.numel()) {
      throw std::runtime_error("adam: missing grad for parameter '" + s.name + "'");
    }
    auto& vals = s.param.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      double gi = (*g)[i];
      s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * gi;
      s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * gi * gi;
      double m_hat = s.m[i] / bc1;
      double v_hat = s.v[i] / bc2;
      vals[i] -= lr_ * m_hat / (std::sqrt(v_hat) + epsilon_);
    }
    s.param.zero_grad();
  }
}

}  // namespace plankd::grad
