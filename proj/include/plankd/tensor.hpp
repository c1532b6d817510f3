#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace plankd::grad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Graph;

// Value-semantic handle onto a shared buffer; copies alias the same storage.
// A tensor built with requires_grad=true owns a zero-initialized grad buffer
// from birth, so unused leaves read back as all-zero gradients.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return values_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return values_ ? values_->size() : 0; }
  bool requires_grad() const { return requires_grad_; }

  const std::vector<double>& values() const { return *values_; }
  std::vector<double>& values() { return *values_; }

  // null when the tensor does not track gradients
  const std::vector<double>* grad() const { return grad_.get(); }
  std::vector<double>* grad() { return grad_.get(); }
  void zero_grad();

  double item() const;

  // Same values buffer, no grad tracking, no graph attachment.
  Tensor detached() const;

  // graph bookkeeping (set by ops)
  void set_node(std::uint64_t generation, int id) { node_gen_ = generation; node_id_ = id; }
  bool attached_to(const Graph& g) const;

 private:
  Shape shape_{};
  std::shared_ptr<std::vector<double>> values_;
  std::shared_ptr<std::vector<double>> grad_;
  bool requires_grad_ = false;
  std::uint64_t node_gen_ = 0;
  int node_id_ = -1;
};

// Append-only record of one training step's operations. Node order is the
// topological order; backward walks it in reverse and then consumes the graph.
class Graph {
 public:
  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  static Graph* active();

  int append(std::function<void()> backward_fn);
  std::uint64_t generation() const { return generation_; }
  std::size_t size() const { return nodes_.size(); }

  void run_backward();
  void consume();  // drops all nodes; previously attached tensors become detached

 private:
  std::vector<std::function<void()>> nodes_;
  std::uint64_t generation_ = 1;
};

// Populates grads of every requires_grad leaf reachable from `loss`, then
// consumes the active graph. Loss must be scalar and attached.
void backward(Tensor& loss);

// While alive, ops neither record nodes nor require an active graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  static bool active();
};

// When enabled, every op rejects non-finite input values.
void set_strict_finite(bool on);
bool strict_finite();

}  // namespace plankd::grad
