#pragma once

#include <span>

#include "plankd/tensor.hpp"

namespace plankd::grad {

// Elementwise / scalar
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor leaky_relu(const Tensor& x, double negative_slope = 0.01);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

// Linear algebra / conv
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n] -> [m,n]; [m,k]x[k] -> [m]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::size_t stride, std::size_t pad);
Tensor add_bias_cols(const Tensor& x, const Tensor& b);  // [m,n] + [m]

// Reductions
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis);  // rank-2 only
Tensor abs_diff_sum(const Tensor& a, const Tensor& b);
Tensor weighted_row_l1(const Tensor& pred, const Tensor& target,
                       std::span<const double> row_weights);
Tensor xlogx_sum(const Tensor& a);  // sum a_i ln a_i, entries < 1e-12 contribute 0

// Structural
Tensor softmax_lastdim(const Tensor& x);
Tensor channel_mean(const Tensor& x);   // [C,H,W] -> [1,H,W]
Tensor spatial_mean(const Tensor& x);   // [C,H,W] -> [C]
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor concat_vec(std::span<const Tensor> parts);
Tensor stack_cols(std::span<const Tensor> cols);  // n vectors [d] -> [d,n]
Tensor row(const Tensor& x, std::size_t r);       // [m,n] -> [n]
Tensor reshape(const Tensor& x, Shape target);

// z = mu + exp(logvar/2) .* eps
Tensor gaussian_reparam(const Tensor& mu, const Tensor& logvar, const Tensor& eps);

}  // namespace plankd::grad
