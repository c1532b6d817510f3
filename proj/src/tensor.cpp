#include "plankd/tensor.hpp"

#include <stdexcept>

namespace plankd::grad {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)),
      values_(std::make_shared<std::vector<double>>(std::move(values))),
      requires_grad_(requires_grad) {
  for (std::size_t d : shape_) {
    if (d == 0) throw std::invalid_argument("tensor: zero dimension in shape " + shape_str(shape_));
  }
  if (values_->size() != shape_numel(shape_)) {
    throw std::invalid_argument("tensor: " + std::to_string(values_->size()) +
                                " values do not fill shape " + shape_str(shape_));
  }
  if (requires_grad_) grad_ = std::make_shared<std::vector<double>>(values_->size(), 0.0);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item: tensor of shape " + shape_str(shape_) + " is not scalar");
  return (*values_)[0];
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape_ = shape_;
  t.values_ = values_;
  t.requires_grad_ = false;
  return t;
}

bool Tensor::attached_to(const Graph& g) const {
  return node_gen_ == g.generation() && node_id_ >= 0 &&
         static_cast<std::size_t>(node_id_) < g.size();
}

namespace {
Graph* g_active_graph = nullptr;
int g_no_grad_depth = 0;
bool g_strict_finite = false;
}  // namespace

Graph::Graph() {
  if (g_active_graph) throw std::runtime_error("graph: another graph is already active");
  g_active_graph = this;
}

Graph::~Graph() {
  if (g_active_graph == this) g_active_graph = nullptr;
}

Graph* Graph::active() { return g_active_graph; }

int Graph::append(std::function<void()> backward_fn) {
  nodes_.push_back(std::move(backward_fn));
  return static_cast<int>(nodes_.size()) - 1;
}

void Graph::run_backward() {
  for (std::size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
}

void Graph::consume() {
  nodes_.clear();
  ++generation_;
}

void backward(Tensor& loss) {
  Graph* g = Graph::active();
  if (!g) throw std::runtime_error("backward: no active graph");
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.attached_to(*g)) throw std::runtime_error("backward: loss is detached from the active graph");
  if (loss.grad()) (*loss.grad())[0] = 1.0;
  g->run_backward();
  g->consume();
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool NoGradGuard::active() { return g_no_grad_depth > 0; }

void set_strict_finite(bool on) { g_strict_finite = on; }
bool strict_finite() { return g_strict_finite; }

}  // namespace plankd::grad
