#include "plankd/ibdistill.hpp"

#include <cmath>
#include <stdexcept>

#include "plankd/ops.hpp"

namespace plankd::ib {

using grad::Tensor;

namespace {

Tensor dense(const ParamMap& params, const std::string& name, const Tensor& x) {
  const Tensor& w = params.at(name + ".w");
  const Tensor& b = params.at(name + ".b");
  Tensor y = grad::matmul(w, x);
  return x.shape().size() == 2 ? grad::add_bias_cols(y, b) : grad::add(y, b);
}

Tensor dense_lrelu(const ParamMap& params, const std::string& name, const Tensor& x) {
  return grad::leaky_relu(dense(params, name, x));
}

}  // namespace

IBModule build_ib(const IBConfig& cfg, std::uint64_t init_seed) {
  if (cfg.hidden == 0 || cfg.latent == 0 || cfg.input_side == 0 || cfg.trunk_layers == 0) {
    throw std::invalid_argument("build_ib: zero-sized layer in config");
  }
  IBModule m;
  m.config = cfg;
  Rng rng(init_seed);
  std::size_t in = cfg.input_dim();

  m.params.add("enc.proj_t.w", fanin_uniform({cfg.hidden, in}, in, rng));
  m.params.add("enc.proj_t.b", fanin_uniform({cfg.hidden}, in, rng));
  m.params.add("enc.proj_s.w", fanin_uniform({cfg.hidden, in}, in, rng));
  m.params.add("enc.proj_s.b", fanin_uniform({cfg.hidden}, in, rng));
  for (std::size_t l = 0; l < cfg.trunk_layers; ++l) {
    std::string nm = "enc.trunk." + std::to_string(l);
    m.params.add(nm + ".w", fanin_uniform({cfg.hidden, cfg.hidden}, cfg.hidden, rng));
    m.params.add(nm + ".b", fanin_uniform({cfg.hidden}, cfg.hidden, rng));
  }
  m.params.add("enc.mu.w", fanin_uniform({cfg.latent, cfg.hidden}, cfg.hidden, rng));
  m.params.add("enc.mu.b", fanin_uniform({cfg.latent}, cfg.hidden, rng));
  m.params.add("enc.logvar.w", fanin_uniform({cfg.latent, cfg.hidden}, cfg.hidden, rng));
  m.params.add("enc.logvar.b", fanin_uniform({cfg.latent}, cfg.hidden, rng));

  std::size_t dec_in = cfg.latent;
  for (std::size_t l = 0; l < cfg.trunk_layers; ++l) {
    std::string nm = "dec.trunk." + std::to_string(l);
    m.params.add(nm + ".w", fanin_uniform({cfg.hidden, dec_in}, dec_in, rng));
    m.params.add(nm + ".b", fanin_uniform({cfg.hidden}, dec_in, rng));
    dec_in = cfg.hidden;
  }
  m.params.add("dec.bin.w", fanin_uniform({7, cfg.hidden}, cfg.hidden, rng));
  m.params.add("dec.bin.b", fanin_uniform({7}, cfg.hidden, rng));
  m.params.add("dec.ter.w", fanin_uniform({3, cfg.hidden}, cfg.hidden, rng));
  m.params.add("dec.ter.b", fanin_uniform({3}, cfg.hidden, rng));
  return m;
}

Tensor channel_average(const Tensor& h, std::size_t side) {
  if (h.shape().size() != 3) {
    throw std::invalid_argument("channel_average: expected rank-3 feature map, got shape " +
                                grad::shape_str(h.shape()));
  }
  return grad::bilinear_resize(grad::channel_mean(h), side, side);
}

Tensor encoder_input(const Tensor& h, std::size_t side) {
  return grad::reshape(channel_average(h, side), {side * side});
}

LatentSample ib_encode(const IBModule& m, const Tensor& flat, Branch branch, const Tensor& eps) {
  const IBConfig& cfg = m.config;
  if (flat.shape().size() != 2 || flat.shape()[0] != cfg.input_dim()) {
    throw std::invalid_argument("ib_encode: expected [" + std::to_string(cfg.input_dim()) +
                                ", B] input, got shape " + grad::shape_str(flat.shape()));
  }
  Tensor x = dense_lrelu(m.params, branch == Branch::kTeacher ? "enc.proj_t" : "enc.proj_s", flat);
  for (std::size_t l = 0; l < cfg.trunk_layers; ++l) {
    x = dense_lrelu(m.params, "enc.trunk." + std::to_string(l), x);
  }
  LatentSample s;
  s.mu = dense(m.params, "enc.mu", x);
  s.logvar = grad::clamp(dense(m.params, "enc.logvar", x), cfg.logvar_min, cfg.logvar_max);
  s.eps = eps;
  s.z = grad::gaussian_reparam(s.mu, s.logvar, eps);
  return s;
}

Tensor kl_to_standard_normal(const Tensor& mu, const Tensor& logvar) {
  if (mu.shape() != logvar.shape()) {
    throw std::invalid_argument("kl_to_standard_normal: shape mismatch " +
                                grad::shape_str(mu.shape()) + " vs " +
                                grad::shape_str(logvar.shape()));
  }
  Tensor inner = grad::add_scalar(
      grad::sub(grad::add(grad::mul(mu, mu), grad::exp(logvar)), logvar), -1.0);
  return grad::scale(grad::sum(inner), 0.5);
}

DecoderOutput ib_decode(const IBModule& m, const Tensor& z) {
  Tensor x = z;
  for (std::size_t l = 0; l < m.config.trunk_layers; ++l) {
    x = dense_lrelu(m.params, "dec.trunk." + std::to_string(l), x);
  }
  DecoderOutput out;
  out.binary_logits = dense(m.params, "dec.bin", x);
  out.ternary_logits = dense(m.params, "dec.ter", x);
  return out;
}

IBLowerBound ib_lower_bound(const LatentSample& latent, const IBModule& m,
                            std::span<const scenario::PlanningStates> states, double beta) {
  std::size_t n = states.size();
  if (n == 0 || latent.z.shape().size() != 2 || latent.z.shape()[1] != n) {
    throw std::invalid_argument("ib_lower_bound: latent batch does not match states batch");
  }
  for (const auto& st : states) {
    auto a = st.as_array();
    for (std::size_t j = 0; j < 8; ++j) {
      std::uint8_t limit = j == 4 ? 2 : 1;  // index 4 is the ternary light
      if (a[j] > limit) {
        throw std::invalid_argument("ib_lower_bound: planning state value out of domain");
      }
    }
  }

  DecoderOutput dec = ib_decode(m, latent.z);

  // binary heads: log q = -softplus(-l) for y=1, -softplus(l) for y=0
  std::vector<double> y(7 * n), y_inv(7 * n);
  for (std::size_t b = 0; b < n; ++b) {
    auto a = states[b].as_array();
    std::array<std::uint8_t, 7> bin{a[0], a[1], a[2], a[3], a[5], a[6], a[7]};
    for (std::size_t j = 0; j < 7; ++j) {
      y[j * n + b] = bin[j];
      y_inv[j * n + b] = 1.0 - bin[j];
    }
  }
  Tensor y_t({7, n}, std::move(y));
  Tensor y_inv_t({7, n}, std::move(y_inv));
  Tensor bce = grad::sum(grad::add(
      grad::mul(y_t, grad::softplus(grad::scale(dec.binary_logits, -1.0))),
      grad::mul(y_inv_t, grad::softplus(dec.binary_logits))));

  // ternary head: cross-entropy via logsumexp with a constant per-column shift
  const auto& lv = dec.ternary_logits.values();
  std::vector<double> shift(3 * n), maxes(n), onehot(3 * n, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    double mx = std::max(lv[b], std::max(lv[n + b], lv[2 * n + b]));
    maxes[b] = mx;
    for (std::size_t j = 0; j < 3; ++j) shift[j * n + b] = mx;
    onehot[static_cast<std::size_t>(states[b].traffic_light) * n + b] = 1.0;
  }
  Tensor shifted = grad::sub(dec.ternary_logits, Tensor({3, n}, std::move(shift)));
  Tensor logz = grad::add(grad::log(grad::sum_axis(grad::exp(shifted), 0)),
                          Tensor({n}, std::move(maxes)));
  Tensor picked = grad::sum_axis(grad::mul(dec.ternary_logits, Tensor({3, n}, std::move(onehot))), 0);
  Tensor ce = grad::sum(grad::sub(logz, picked));

  Tensor loglik = grad::scale(grad::add(bce, ce), -1.0);
  Tensor kl = kl_to_standard_normal(latent.mu, latent.logvar);

  double inv_n = 1.0 / static_cast<double>(n);
  IBLowerBound out;
  out.value = grad::sub(grad::scale(loglik, inv_n), grad::scale(kl, beta * inv_n));
  out.mean_kl = kl.item() * inv_n;
  out.mean_loglik = loglik.item() * inv_n;
  return out;
}

Tensor feature_distill_loss(const Tensor& z_teacher, const Tensor& z_student) {
  if (z_teacher.shape() != z_student.shape()) {
    throw std::invalid_argument("feature_distill_loss: shape mismatch " +
                                grad::shape_str(z_teacher.shape()) + " vs " +
                                grad::shape_str(z_student.shape()));
  }
  Tensor frozen = z_teacher.detached();
  return grad::scale(grad::abs_diff_sum(z_student, frozen),
                     1.0 / static_cast<double>(z_student.numel()));
}

scenario::PlanningStates predict_states(const DecoderOutput& out, std::size_t b) {
  std::size_t n = out.binary_logits.shape()[1];
  const auto& bl = out.binary_logits.values();
  const auto& tl = out.ternary_logits.values();
  auto bin = [&](std::size_t j) -> std::uint8_t { return bl[j * n + b] > 0.0 ? 1 : 0; };
  scenario::PlanningStates st;
  st.nearby_vehicle = bin(0);
  st.nearby_pedestrian = bin(1);
  st.traffic_sign = bin(2);
  st.junction = bin(3);
  st.brake = bin(4);
  st.throttle = bin(5);
  st.steer = bin(6);
  std::size_t best = 0;
  for (std::size_t j = 1; j < 3; ++j) {
    if (tl[j * n + b] > tl[best * n + b]) best = j;
  }
  st.traffic_light = static_cast<std::uint8_t>(best);
  return st;
}

}  // namespace plankd::ib
