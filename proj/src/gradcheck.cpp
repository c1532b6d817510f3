#include "plankd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace plankd::grad {

namespace {
double eval_scalar(const std::function<Tensor()>& build_loss) {
  NoGradGuard ng;
  Tensor loss = build_loss();
  if (loss.numel() != 1) {
    throw std::invalid_argument("grad_check: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  return loss.item();
}
}  // namespace

double grad_check(const std::function<Tensor()>& build_loss, std::vector<Tensor>& params,
                  double step) {
  if (Graph::active()) throw std::runtime_error("grad_check: a graph is already active");

  double probe_a = eval_scalar(build_loss);
  double probe_b = eval_scalar(build_loss);
  if (!(probe_a == probe_b)) {
    throw std::runtime_error("grad_check: build_loss is not deterministic");
  }

  // analytic pass
  std::vector<std::vector<double>> analytic;
  {
    for (Tensor& p : params) p.zero_grad();
    Graph g;
    Tensor loss = build_loss();
    backward(loss);
    for (Tensor& p : params) {
      if (!p.grad()) {
        throw std::invalid_argument("grad_check: parameter does not require grad");
      }
      analytic.push_back(*p.grad());
    }
  }

  double max_err = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& v = params[pi].values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      double saved = v[i];
      v[i] = saved + step;
      double f_plus = eval_scalar(build_loss);
      v[i] = saved - step;
      double f_minus = eval_scalar(build_loss);
      v[i] = saved;
      double numeric = (f_plus - f_minus) / (2.0 * step);
      double a = analytic[pi][i];
      if (std::abs(a) < 1e-10 && std::abs(numeric) < 1e-10) continue;
      double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace plankd::grad
