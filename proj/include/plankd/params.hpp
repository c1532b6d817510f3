#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "plankd/rng.hpp"
#include "plankd/tensor.hpp"

namespace plankd {

// Ordered name -> tensor map. Order is construction order and is what the
// checkpoint format and optimizer registration iterate over.
class ParamMap {
 public:
  grad::Tensor& add(const std::string& name, grad::Tensor t) {
    for (auto& [n, _] : items_) {
      if (n == name) throw std::invalid_argument("params: duplicate name '" + name + "'");
    }
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
  }

  grad::Tensor& at(const std::string& name) {
    for (auto& [n, t] : items_) {
      if (n == name) return t;
    }
    throw std::out_of_range("params: no parameter named '" + name + "'");
  }

  const grad::Tensor& at(const std::string& name) const {
    return const_cast<ParamMap*>(this)->at(name);
  }

  bool contains(const std::string& name) const {
    for (auto& [n, _] : items_) {
      if (n == name) return true;
    }
    return false;
  }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (auto& [_, t] : items_) n += t.numel();
    return n;
  }

  void set_requires_grad(bool on) {
    for (auto& [n, t] : items_) {
      if (t.requires_grad() == on) continue;
      grad::Tensor repl(t.shape(), t.values(), on);
      t = std::move(repl);
    }
  }

  void zero_grads() {
    for (auto& [_, t] : items_) t.zero_grad();
  }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  std::size_t size() const { return items_.size(); }

 private:
  std::vector<std::pair<std::string, grad::Tensor>> items_;
};

// Scaled-uniform fan-in init: U[-1/sqrt(fan_in), 1/sqrt(fan_in)]
inline grad::Tensor fanin_uniform(grad::Shape shape, std::size_t fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::size_t n = grad::shape_numel(shape);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return grad::Tensor(std::move(shape), std::move(v), true);
}

}  // namespace plankd
