#include "plankd/waypointdistill.hpp"

#include <cmath>
#include <stdexcept>

#include "plankd/ops.hpp"

namespace plankd::attn {

using grad::Tensor;

namespace {
constexpr double kTieGuard = 1e-9;
constexpr double kCoordNorm = 16.0;  // waypoint meters -> roughly [-1, 1] key inputs
}  // namespace

AttnModule build_attn(const AttnConfig& cfg, std::uint64_t init_seed) {
  if (cfg.conv_widths.size() != cfg.conv_strides.size() || cfg.conv_widths.empty()) {
    throw std::invalid_argument("build_attn: conv widths/strides mismatch");
  }
  if (cfg.bev_hidden == 0 || cfg.dk == 0 || cfg.wp_hidden == 0) {
    throw std::invalid_argument("build_attn: zero-sized layer in config");
  }
  std::size_t spatial = scenario::kGrid;
  for (std::size_t s : cfg.conv_strides) {
    if (s == 0) throw std::invalid_argument("build_attn: zero stride");
    spatial = (spatial + 2 - 3) / s + 1;
    if (spatial == 0) throw std::invalid_argument("build_attn: conv stack exhausts the grid");
  }

  AttnModule m;
  m.config = cfg;
  Rng rng(init_seed);
  std::size_t in_ch = scenario::kChannels + 2;
  for (std::size_t l = 0; l < cfg.conv_widths.size(); ++l) {
    std::size_t out_ch = cfg.conv_widths[l];
    if (out_ch == 0) throw std::invalid_argument("build_attn: zero conv width");
    std::string nm = "bev.conv." + std::to_string(l);
    m.params.add(nm + ".w", fanin_uniform({out_ch, in_ch, 3, 3}, in_ch * 9, rng));
    m.params.add(nm + ".b", fanin_uniform({out_ch}, in_ch * 9, rng));
    in_ch = out_ch;
  }
  std::size_t flat = in_ch * spatial * spatial;
  m.params.add("bev.fc1.w", fanin_uniform({cfg.bev_hidden, flat}, flat, rng));
  m.params.add("bev.fc1.b", fanin_uniform({cfg.bev_hidden}, flat, rng));
  m.params.add("bev.fc2.w", fanin_uniform({cfg.dk, cfg.bev_hidden}, cfg.bev_hidden, rng));
  m.params.add("bev.fc2.b", fanin_uniform({cfg.dk}, cfg.bev_hidden, rng));
  m.params.add("wp.fc1.w", fanin_uniform({cfg.wp_hidden, 2}, 2, rng));
  m.params.add("wp.fc1.b", fanin_uniform({cfg.wp_hidden}, 2, rng));
  m.params.add("wp.fc2.w", fanin_uniform({cfg.dk, cfg.wp_hidden}, cfg.wp_hidden, rng));
  m.params.add("wp.fc2.b", fanin_uniform({cfg.dk}, cfg.wp_hidden, rng));
  return m;
}

Tensor coord_augment(const Tensor& bev) {
  if (bev.shape().size() != 3) {
    throw std::invalid_argument("coord_augment: expected rank-3 BEV, got shape " +
                                grad::shape_str(bev.shape()));
  }
  std::size_t c = bev.shape()[0], h = bev.shape()[1], w = bev.shape()[2];
  std::vector<double> out((c + 2) * h * w);
  std::copy(bev.values().begin(), bev.values().end(), out.begin());
  for (std::size_t iy = 0; iy < h; ++iy) {
    for (std::size_t ix = 0; ix < w; ++ix) {
      double xn = 2.0 * (static_cast<double>(ix) + 0.5) / static_cast<double>(w) - 1.0;
      double yn = 2.0 * (static_cast<double>(iy) + 0.5) / static_cast<double>(h) - 1.0;
      out[(c * h + iy) * w + ix] = xn;
      out[((c + 1) * h + iy) * w + ix] = yn;
    }
  }
  return Tensor({c + 2, h, w}, std::move(out), false);
}

Tensor bev_query(const AttnModule& m, const Tensor& bev_aug) {
  const AttnConfig& cfg = m.config;
  Tensor x = bev_aug;
  for (std::size_t l = 0; l < cfg.conv_widths.size(); ++l) {
    std::string nm = "bev.conv." + std::to_string(l);
    x = grad::leaky_relu(grad::conv2d(x, m.params.at(nm + ".w"), m.params.at(nm + ".b"),
                                      cfg.conv_strides[l], 1));
  }
  Tensor flat = grad::reshape(x, {x.numel()});
  Tensor hidden = grad::leaky_relu(
      grad::add(grad::matmul(m.params.at("bev.fc1.w"), flat), m.params.at("bev.fc1.b")));
  return grad::add(grad::matmul(m.params.at("bev.fc2.w"), hidden), m.params.at("bev.fc2.b"));
}

Tensor waypoint_key(const AttnModule& m, const Tensor& waypoint) {
  if (waypoint.shape() != grad::Shape{2}) {
    throw std::invalid_argument("waypoint_key: expected [2] waypoint, got shape " +
                                grad::shape_str(waypoint.shape()));
  }
  Tensor scaled = grad::scale(waypoint, 1.0 / kCoordNorm);
  Tensor hidden = grad::leaky_relu(
      grad::add(grad::matmul(m.params.at("wp.fc1.w"), scaled), m.params.at("wp.fc1.b")));
  return grad::add(grad::matmul(m.params.at("wp.fc2.w"), hidden), m.params.at("wp.fc2.b"));
}

Tensor waypoint_attention(const AttnModule& m, const Tensor& bev_aug, const Tensor& waypoints) {
  if (waypoints.shape().size() != 2 || waypoints.shape()[1] != 2 || waypoints.shape()[0] == 0) {
    throw std::invalid_argument("waypoint_attention: expected [T,2] waypoints with T >= 1, got " +
                                grad::shape_str(waypoints.shape()));
  }
  std::size_t t_count = waypoints.shape()[0];
  Tensor q = bev_query(m, bev_aug);
  double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(m.config.dk));
  std::vector<Tensor> logits;
  logits.reserve(t_count);
  for (std::size_t i = 0; i < t_count; ++i) {
    Tensor k = waypoint_key(m, grad::row(waypoints, i));
    logits.push_back(grad::scale(grad::sum(grad::mul(q, k)), inv_sqrt_dk));
  }
  return grad::softmax_lastdim(grad::concat_vec(logits));
}

std::vector<double> safety_kernel(std::span<const std::array<float, 2>> waypoints,
                                  std::span<const scenario::ObstaclePose> obstacles,
                                  double sigma) {
  if (sigma <= 0.0) throw std::invalid_argument("safety_kernel: sigma must be positive");
  std::vector<double> psi(waypoints.size(), 0.0);
  double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < waypoints.size(); ++i) {
    for (const scenario::ObstaclePose& o : obstacles) {
      if (!o.moving()) continue;
      double dx = static_cast<double>(waypoints[i][0]) - o.x;
      double dy = static_cast<double>(waypoints[i][1]) - o.y;
      psi[i] += std::exp(-(dx * dx + dy * dy) * inv);
    }
  }
  return psi;
}

Tensor ranking_loss(const Tensor& a, std::span<const double> psi, bool include_ties) {
  if (a.shape().size() != 1 || a.numel() != psi.size()) {
    throw std::invalid_argument("ranking_loss: length mismatch " + grad::shape_str(a.shape()) +
                                " vs " + std::to_string(psi.size()) + " safety scores");
  }
  std::size_t t_count = psi.size();
  // each selected pair (i, j) contributes max(0, -r_ij (a_i - a_j)), encoded as
  // one row of a constant matrix applied to a
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < t_count; ++i) {
    for (std::size_t j = 0; j < t_count; ++j) {
      bool tied = std::abs(psi[i] - psi[j]) < kTieGuard;
      if (tied && !include_ties) continue;
      double r = psi[i] > psi[j] ? 1.0 : -1.0;
      std::vector<double> row(t_count, 0.0);
      row[i] = -r;
      row[j] = r;
      rows.push_back(std::move(row));
    }
  }
  if (rows.empty()) return Tensor::scalar(0.0);
  std::vector<double> flat;
  flat.reserve(rows.size() * t_count);
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  Tensor pair_matrix({rows.size(), t_count}, std::move(flat));
  return grad::sum(grad::relu(grad::matmul(pair_matrix, a)));
}

Tensor attentive_waypoint_loss(std::span<const double> a, const Tensor& pred,
                               const Tensor& target) {
  if (pred.shape() != target.shape() || pred.shape().size() != 2 ||
      pred.shape()[0] != a.size()) {
    throw std::invalid_argument("attentive_waypoint_loss: length mismatch " +
                                grad::shape_str(pred.shape()) + " vs " +
                                grad::shape_str(target.shape()) + " with " +
                                std::to_string(a.size()) + " weights");
  }
  return grad::weighted_row_l1(pred, target.detached(), a);
}

Tensor entropy_loss(const Tensor& a) {
  if (a.shape().size() != 1) {
    throw std::invalid_argument("entropy_loss: expected rank-1 attention, got shape " +
                                grad::shape_str(a.shape()));
  }
  return grad::xlogx_sum(a);
}

}  // namespace plankd::attn
