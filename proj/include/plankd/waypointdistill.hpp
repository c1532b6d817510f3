#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "plankd/params.hpp"
#include "plankd/scenario.hpp"
#include "plankd/tensor.hpp"

namespace plankd::attn {

struct AttnConfig {
  std::vector<std::size_t> conv_widths{16, 32, 32, 64, 64, 64};
  std::vector<std::size_t> conv_strides{2, 2, 2, 1, 1, 1};
  std::size_t bev_hidden = 512;
  std::size_t dk = 64;
  std::size_t wp_hidden = 128;

  static AttnConfig micro() {
    AttnConfig c;
    c.conv_widths = {2, 2, 2};
    c.conv_strides = {2, 2, 2};
    c.bev_hidden = 6;
    c.dk = 4;
    c.wp_hidden = 4;
    return c;
  }
};

// scene-context query encoder (conv + dense) and per-waypoint key encoder
struct AttnModule {
  AttnConfig config;
  ParamMap params;
};

AttnModule build_attn(const AttnConfig& config, std::uint64_t init_seed);

// [C,H,W] -> [C+2,H,W]; appended channels are cell-center x and y in [-1, 1]
grad::Tensor coord_augment(const grad::Tensor& bev);

grad::Tensor bev_query(const AttnModule& m, const grad::Tensor& bev_aug);     // -> [dk]
grad::Tensor waypoint_key(const AttnModule& m, const grad::Tensor& waypoint); // [2] -> [dk]

// softmax over (q . k_i) / sqrt(dk); differentiable through both encoders
grad::Tensor waypoint_attention(const AttnModule& m, const grad::Tensor& bev_aug,
                                const grad::Tensor& waypoints /* [T,2] */);

// psi_i = sum over moving obstacles of exp(-|p_i - p_j|^2 / (2 sigma^2));
// supervision signal only, no gradients
std::vector<double> safety_kernel(std::span<const std::array<float, 2>> waypoints,
                                  std::span<const scenario::ObstaclePose> obstacles, double sigma);

// pairwise hinge over ordered pairs; near-equal psi pairs are skipped unless
// include_ties replicates the literal r_ij = -1 tie convention
grad::Tensor ranking_loss(const grad::Tensor& a, std::span<const double> psi,
                          bool include_ties = false);

// sum_i a_i (|dx_i| + |dy_i|); attention enters as fixed weights
grad::Tensor attentive_waypoint_loss(std::span<const double> a, const grad::Tensor& pred,
                                     const grad::Tensor& target);

// sum a_i ln a_i (negative entropy); minimizing flattens the distribution
grad::Tensor entropy_loss(const grad::Tensor& a);

}  // namespace plankd::attn
