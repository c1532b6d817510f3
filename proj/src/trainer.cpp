#include "plankd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "plankd/adam.hpp"
#include "plankd/errors.hpp"
#include "plankd/gradcheck.hpp"
#include "plankd/ops.hpp"

namespace plankd::train {

using grad::Tensor;

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kNoEntropy: return "no_entropy";
    case Ablation::kNoSafeAtt: return "no_safe_att";
    case Ablation::kNoIB: return "no_ib";
  }
  return "?";
}

Ablation ablation_from_name(const std::string& name) {
  for (Ablation a : {Ablation::kFull, Ablation::kNoEntropy, Ablation::kNoSafeAtt, Ablation::kNoIB}) {
    if (name == ablation_name(a)) return a;
  }
  throw std::invalid_argument("unknown ablation '" + name + "'");
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string config_echo_text(const DistillConfig& cfg) {
  std::string out;
  auto kv = [&out](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
  kv("alpha_z", fmt(cfg.alpha_z));
  kv("alpha_r", fmt(cfg.alpha_r));
  kv("alpha_e", fmt(cfg.alpha_e));
  kv("beta", fmt(cfg.beta));
  kv("sigma_kernel", fmt(cfg.sigma_kernel));
  kv("delta", fmt(cfg.delta));
  kv("lr", fmt(cfg.lr));
  kv("epochs", std::to_string(cfg.epochs));
  kv("batch_size", std::to_string(cfg.batch_size));
  kv("T", std::to_string(cfg.T));
  kv("seed_data", std::to_string(cfg.seed_data));
  kv("seed_init", std::to_string(cfg.seed_init));
  kv("seed_train", std::to_string(cfg.seed_train));
  kv("ablation", ablation_name(cfg.ablation));
  kv("teacher_waypoint_source",
     cfg.teacher_waypoint_source == TeacherWaypointSource::kExpert ? "expert" : "teacher_output");
  std::string widths;
  for (std::size_t w : cfg.student.conv_widths) widths += (widths.empty() ? "" : ",") + std::to_string(w);
  kv("student_conv_widths", widths);
  std::string hidden;
  for (std::size_t h : cfg.student.head_hidden) hidden += (hidden.empty() ? "" : ",") + std::to_string(h);
  kv("student_head_hidden", hidden);
  return out;
}

// per-scene constants reused across epochs; the teacher is frozen so its
// features and waypoints are precomputed once
struct SampleData {
  Tensor bev;
  Tensor bev_aug;
  Tensor expert_wp;
  Tensor teacher_wp;
  std::vector<double> teacher_flat;
  std::vector<double> psi;
  scenario::PlanningStates states;
  double speed = 0.0;
  scenario::Command command = scenario::Command::kFollow;
};

SampleData make_sample(const scenario::Scene& s, const planner::PlannerModel& teacher,
                       const DistillConfig& cfg, bool need_attention) {
  SampleData d;
  d.bev = scenario::bev_tensor(s);
  if (need_attention) d.bev_aug = attn::coord_augment(d.bev);
  d.speed = s.speed;
  d.command = s.command;
  d.states = s.states;

  std::vector<double> wp;
  wp.reserve(2 * s.expert_traj.size());
  for (const auto& w : s.expert_traj) {
    wp.push_back(w[0]);
    wp.push_back(w[1]);
  }
  d.expert_wp = Tensor({s.expert_traj.size(), 2}, std::move(wp));
  d.psi = attn::safety_kernel(s.expert_traj, s.obstacles, cfg.sigma_kernel);

  grad::NoGradGuard ng;
  planner::PlannerOutput out = planner::planner_forward(teacher, {d.bev, d.speed, d.command});
  d.teacher_flat = ib::encoder_input(out.mid_feature, cfg.ib_config.input_side).values();
  d.teacher_wp = out.waypoints.detached();
  return d;
}

Tensor batch_mean(std::vector<Tensor>& terms) {
  return grad::mean(grad::concat_vec(terms));
}

// Quantities the gradient routing treats as constants (attention weights in
// the waypoint losses, the teacher latent in L_z), pinned at a base point so
// finite differences see the same function backward differentiates.
struct PinnedStops {
  std::vector<std::vector<double>> weights;
  Tensor z_teacher;
};

LossComponents build_components(std::span<const SampleData* const> batch,
                                const planner::PlannerModel& student, const ib::IBModule& ib_m,
                                const attn::AttnModule& attn_m, const DistillConfig& cfg,
                                const Tensor& eps, const PinnedStops* pins = nullptr) {
  std::size_t n = batch.size();
  std::vector<Tensor> flat_cols, student_wp;
  flat_cols.reserve(n);
  student_wp.reserve(n);
  for (const SampleData* d : batch) {
    planner::PlannerOutput out = planner::planner_forward(student, {d->bev, d->speed, d->command});
    flat_cols.push_back(ib::encoder_input(out.mid_feature, cfg.ib_config.input_side));
    student_wp.push_back(out.waypoints);
  }
  Tensor flat_s = grad::stack_cols(flat_cols);

  std::size_t in_dim = cfg.ib_config.input_dim();
  std::vector<double> tf(in_dim * n);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < in_dim; ++i) tf[i * n + b] = batch[b]->teacher_flat[i];
  }
  Tensor flat_t({in_dim, n}, std::move(tf));

  LossComponents c;
  if (cfg.ablation != Ablation::kNoIB) {
    std::vector<scenario::PlanningStates> states;
    states.reserve(n);
    for (const SampleData* d : batch) states.push_back(d->states);
    ib::LatentSample lat_t = ib::ib_encode(ib_m, flat_t, ib::Branch::kTeacher, eps);
    ib::LatentSample lat_s = ib::ib_encode(ib_m, flat_s, ib::Branch::kStudent, eps);
    Tensor lb_t = ib::ib_lower_bound(lat_t, ib_m, states, cfg.beta).value;
    Tensor lb_s = ib::ib_lower_bound(lat_s, ib_m, states, cfg.beta).value;
    c.l_ib = grad::scale(grad::add(lb_t, lb_s), 0.5);
    c.l_z = ib::feature_distill_loss(pins ? pins->z_teacher : lat_t.z, lat_s.z);
  } else {
    c.l_ib = Tensor::scalar(0.0);
    c.l_z = grad::scale(grad::abs_diff_sum(flat_s, flat_t),
                        1.0 / static_cast<double>(flat_s.numel()));
  }

  std::vector<std::vector<double>> weights(n);
  if (cfg.ablation != Ablation::kNoSafeAtt) {
    std::vector<Tensor> rank_terms, entropy_terms;
    rank_terms.reserve(n);
    entropy_terms.reserve(n);
    for (std::size_t b = 0; b < n; ++b) {
      Tensor a = attn::waypoint_attention(attn_m, batch[b]->bev_aug, batch[b]->expert_wp);
      rank_terms.push_back(attn::ranking_loss(a, batch[b]->psi));
      entropy_terms.push_back(attn::entropy_loss(a));
      weights[b] = pins ? pins->weights[b] : a.values();  // consumed as fixed weights below
    }
    c.l_rank = batch_mean(rank_terms);
    c.l_e = batch_mean(entropy_terms);
  } else {
    for (std::size_t b = 0; b < n; ++b) {
      weights[b].assign(cfg.T, 1.0 / static_cast<double>(cfg.T));
    }
    c.l_rank = Tensor::scalar(0.0);
    c.l_e = Tensor::scalar(0.0);
  }

  std::vector<Tensor> lw_terms, lws_terms;
  lw_terms.reserve(n);
  lws_terms.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    const Tensor& teacher_target = cfg.teacher_waypoint_source == TeacherWaypointSource::kExpert
                                       ? batch[b]->expert_wp
                                       : batch[b]->teacher_wp;
    lw_terms.push_back(attn::attentive_waypoint_loss(weights[b], student_wp[b], teacher_target));
    lws_terms.push_back(
        attn::attentive_waypoint_loss(weights[b], student_wp[b], batch[b]->expert_wp));
  }
  c.l_w = batch_mean(lw_terms);
  c.l_w_star = batch_mean(lws_terms);
  return c;
}

void require_finite(const Tensor& t, const char* name) {
  if (!t.defined() || t.numel() != 1) {
    throw NumericError(std::string("total_loss: component ") + name + " is not a scalar");
  }
  if (!std::isfinite(t.values()[0])) {
    throw NumericError(std::string("total_loss: non-finite component ") + name);
  }
}

}  // namespace

Tensor total_loss(const LossComponents& c, const DistillConfig& cfg) {
  require_finite(c.l_w, "L_w");
  require_finite(c.l_w_star, "L_w*");
  require_finite(c.l_ib, "L_IB");
  require_finite(c.l_z, "L_z");
  require_finite(c.l_rank, "L_rank");
  require_finite(c.l_e, "L_e");

  Tensor total = grad::add(c.l_w, c.l_w_star);
  if (cfg.ablation != Ablation::kNoIB) total = grad::sub(total, c.l_ib);
  total = grad::add(total, grad::scale(c.l_z, cfg.alpha_z));
  if (cfg.ablation != Ablation::kNoSafeAtt) {
    total = grad::add(total, grad::scale(c.l_rank, cfg.alpha_r));
    double alpha_e = cfg.ablation == Ablation::kNoEntropy ? 0.0 : cfg.alpha_e;
    total = grad::add(total, grad::scale(c.l_e, alpha_e));
  }
  return total;
}

std::string TrainReport::digest_text() const {
  std::string out = config_echo + seed_echo;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const StepRecord& r = steps[i];
    out += "step " + std::to_string(i) + " total=" + fmt(r.total) + " l_w=" + fmt(r.l_w) +
           " l_w_star=" + fmt(r.l_w_star) + " neg_l_ib=" + fmt(r.neg_l_ib) + " l_z=" + fmt(r.l_z) +
           " l_rank=" + fmt(r.l_rank) + " l_e=" + fmt(r.l_e) + "\n";
  }
  for (std::size_t e = 0; e < epoch_eval.size(); ++e) {
    const harness::EvalMetrics& m = epoch_eval[e];
    out += "epoch " + std::to_string(e) + " waypoint_l1=" + fmt(m.waypoint_l1) +
           " crucial_l1=" + fmt(m.crucial_l1) +
           " collision_proxy_rate=" + fmt(m.collision_proxy_rate) +
           " composite_score=" + fmt(m.composite_score) + "\n";
  }
  return out;
}

DistillResult distill(const planner::PlannerModel& teacher, const scenario::Dataset& train_data,
                      const DistillConfig& cfg, const scenario::Dataset* eval_data) {
  if (train_data.scenes.empty()) throw std::invalid_argument("distill: empty dataset");
  if (train_data.T != cfg.T || teacher.config.T != cfg.T) {
    throw std::invalid_argument("distill: waypoint count mismatch between config, dataset, teacher");
  }
  if (cfg.batch_size == 0) throw std::invalid_argument("distill: batch_size must be positive");
  for (const auto& [name, t] : teacher.params) {
    if (t.requires_grad()) {
      throw std::invalid_argument("distill: teacher parameter '" + name + "' is not frozen");
    }
  }

  DistillResult res;
  res.student = planner::build_planner(cfg.student, cfg.seed_init);
  res.ib_module = ib::build_ib(cfg.ib_config, Rng(cfg.seed_init).fork(1).seed());
  res.attn_module = attn::build_attn(cfg.attn_config, Rng(cfg.seed_init).fork(2).seed());
  res.report.config_echo = config_echo_text(cfg);
  res.report.seed_echo = "seeds data=" + std::to_string(cfg.seed_data) +
                         " init=" + std::to_string(cfg.seed_init) +
                         " train=" + std::to_string(cfg.seed_train) + "\n";

  grad::Adam opt(cfg.lr);
  for (auto& [n, t] : res.student.params) opt.register_param("student." + n, t);
  for (auto& [n, t] : res.ib_module.params) opt.register_param("ib." + n, t);
  for (auto& [n, t] : res.attn_module.params) opt.register_param("attn." + n, t);

  bool need_attention = cfg.ablation != Ablation::kNoSafeAtt;
  std::vector<SampleData> samples;
  samples.reserve(train_data.scenes.size());
  for (const scenario::Scene& s : train_data.scenes) {
    samples.push_back(make_sample(s, teacher, cfg, need_attention));
  }

  Rng rng_train(cfg.seed_train);
  Rng rng_data(cfg.seed_data);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto t_epoch = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng er = rng_data.fork(epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[er.next_below(i)]);
    }

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(start + cfg.batch_size, order.size());
      std::vector<const SampleData*> batch;
      batch.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) batch.push_back(&samples[order[k]]);

      Tensor eps;
      if (cfg.ablation != Ablation::kNoIB) {
        std::size_t m = cfg.ib_config.latent * batch.size();
        std::vector<double> ev(m);
        for (double& v : ev) v = rng_train.normal();
        eps = Tensor({cfg.ib_config.latent, batch.size()}, std::move(ev));
      }

      grad::Graph graph;
      LossComponents c;
      Tensor loss;
      try {
        c = build_components(batch, res.student, res.ib_module, res.attn_module, cfg, eps);
        loss = total_loss(c, cfg);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at step " + std::to_string(step));
      }
      StepRecord rec;
      rec.total = loss.item();
      rec.l_w = c.l_w.item();
      rec.l_w_star = c.l_w_star.item();
      rec.neg_l_ib = -c.l_ib.item();
      rec.l_z = c.l_z.item();
      rec.l_rank = c.l_rank.item();
      rec.l_e = c.l_e.item();
      grad::backward(loss);
      opt.step();
      res.report.steps.push_back(rec);
      ++step;
    }

    if (eval_data) {
      harness::EvalParams ep;
      ep.sigma_kernel = cfg.sigma_kernel;
      res.report.epoch_eval.push_back(harness::evaluate(res.student, *eval_data, ep));
    }
    res.report.epoch_wall_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_epoch).count());
  }

  for (const auto& [name, t] : teacher.params) {
    if (t.grad() != nullptr) {
      throw std::logic_error("distill: frozen teacher accumulated a gradient on '" + name + "'");
    }
  }
  return res;
}

std::vector<AblationOutcome> run_ablations(const planner::PlannerModel& teacher,
                                           const scenario::Dataset& train_data,
                                           const DistillConfig& cfg,
                                           const scenario::Dataset& eval_data) {
  std::vector<AblationOutcome> out;
  for (Ablation a : {Ablation::kFull, Ablation::kNoEntropy, Ablation::kNoSafeAtt, Ablation::kNoIB}) {
    DistillConfig variant = cfg;
    variant.ablation = a;
    DistillResult r = distill(teacher, train_data, variant, &eval_data);
    AblationOutcome o;
    o.name = ablation_name(a);
    o.final_eval = r.report.epoch_eval.back();
    o.report = std::move(r.report);
    out.push_back(std::move(o));
  }
  return out;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("spearman: need two sequences of equal length >= 2");
  }
  auto ranks = [](std::span<const double> v) {
    std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // average of ranks i+1 .. j+1
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> ra = ranks(a), rb = ranks(b);
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(ra.size());
  mb /= static_cast<double>(rb.size());
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

AttentionProbeResult attention_probe(const scenario::Dataset& train_data,
                                     const scenario::Dataset& held_out,
                                     const AttentionProbeConfig& cfg) {
  if (train_data.scenes.empty() || held_out.scenes.empty()) {
    throw std::invalid_argument("attention_probe: empty dataset");
  }
  struct Item {
    Tensor bev_aug;
    Tensor wp;
    std::vector<double> psi;
  };
  auto prepare = [&](const scenario::Dataset& d) {
    std::vector<Item> items;
    items.reserve(d.scenes.size());
    for (const scenario::Scene& s : d.scenes) {
      Item it;
      it.bev_aug = attn::coord_augment(scenario::bev_tensor(s));
      std::vector<double> wp;
      for (const auto& w : s.expert_traj) {
        wp.push_back(w[0]);
        wp.push_back(w[1]);
      }
      it.wp = Tensor({s.expert_traj.size(), 2}, std::move(wp));
      it.psi = attn::safety_kernel(s.expert_traj, s.obstacles, cfg.sigma_kernel);
      items.push_back(std::move(it));
    }
    return items;
  };
  std::vector<Item> train_items = prepare(train_data);
  std::vector<Item> held_items = prepare(held_out);

  attn::AttnModule m = attn::build_attn(cfg.attn_config, cfg.seed);
  grad::Adam opt(cfg.lr);
  for (auto& [n, t] : m.params) opt.register_param(n, t);

  Rng rng(cfg.seed + 1);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    grad::Graph graph;
    std::vector<Tensor> terms;
    terms.reserve(cfg.batch_size);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const Item& it = train_items[rng.next_below(train_items.size())];
      Tensor a = attn::waypoint_attention(m, it.bev_aug, it.wp);
      terms.push_back(grad::add(attn::ranking_loss(a, it.psi),
                                grad::scale(attn::entropy_loss(a), cfg.alpha_e)));
    }
    Tensor loss = batch_mean(terms);
    grad::backward(loss);
    opt.step();
  }

  AttentionProbeResult res;
  std::size_t passed = 0;
  double rho_sum = 0.0;
  grad::NoGradGuard ng;
  for (const Item& it : held_items) {
    std::vector<double> sorted_psi(it.psi);
    std::sort(sorted_psi.begin(), sorted_psi.end());
    std::size_t distinct = 1;
    for (std::size_t i = 1; i < sorted_psi.size(); ++i) {
      if (sorted_psi[i] - sorted_psi[i - 1] > 1e-9) ++distinct;
    }
    if (distinct < 2) continue;
    ++res.eligible;
    Tensor a = attn::waypoint_attention(m, it.bev_aug, it.wp);
    double rho = spearman(a.values(), it.psi);
    rho_sum += rho;
    if (rho > 0.8) ++passed;
  }
  if (res.eligible > 0) {
    res.spearman_pass_rate = static_cast<double>(passed) / static_cast<double>(res.eligible);
    res.mean_rho = rho_sum / static_cast<double>(res.eligible);
  }
  return res;
}

IBProbeResult ib_probe(const planner::PlannerModel& teacher, const scenario::Dataset& train_data,
                       const scenario::Dataset& held_out, const IBProbeConfig& cfg) {
  if (train_data.scenes.empty() || held_out.scenes.empty()) {
    throw std::invalid_argument("ib_probe: empty dataset");
  }
  std::size_t side = cfg.ib_config.input_side;
  auto flats = [&](const scenario::Dataset& d) {
    grad::NoGradGuard ng;
    std::vector<std::vector<double>> out;
    out.reserve(d.scenes.size());
    for (const scenario::Scene& s : d.scenes) {
      planner::PlannerOutput o = planner::planner_forward(
          teacher, {scenario::bev_tensor(s), static_cast<double>(s.speed), s.command});
      out.push_back(ib::encoder_input(o.mid_feature, side).values());
    }
    return out;
  };
  std::vector<std::vector<double>> train_flats = flats(train_data);
  std::vector<std::vector<double>> held_flats = flats(held_out);

  ib::IBModule m = ib::build_ib(cfg.ib_config, cfg.seed);
  grad::Adam opt(cfg.lr);
  for (auto& [n, t] : m.params) opt.register_param(n, t);

  std::size_t in_dim = cfg.ib_config.input_dim();
  auto stack = [&](const std::vector<std::vector<double>>& fl, std::span<const std::size_t> idx) {
    std::vector<double> v(in_dim * idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      for (std::size_t i = 0; i < in_dim; ++i) v[i * idx.size() + b] = fl[idx[b]][i];
    }
    return Tensor({in_dim, idx.size()}, std::move(v));
  };

  Rng rng(cfg.seed + 1);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_flats.size());
    std::iota(order.begin(), order.end(), 0);
    Rng er = rng.fork(epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[er.next_below(i)]);
    }
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(start + cfg.batch_size, order.size());
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<scenario::PlanningStates> states;
      states.reserve(idx.size());
      for (std::size_t k : idx) states.push_back(train_data.scenes[k].states);
      std::vector<double> ev(cfg.ib_config.latent * idx.size());
      for (double& v : ev) v = rng.normal();
      Tensor eps({cfg.ib_config.latent, idx.size()}, std::move(ev));

      grad::Graph graph;
      Tensor flat = stack(train_flats, idx);
      ib::LatentSample lat = ib::ib_encode(m, flat, ib::Branch::kTeacher, eps);
      Tensor loss = grad::scale(ib::ib_lower_bound(lat, m, states, cfg.beta).value, -1.0);
      if (!std::isfinite(loss.item())) throw NumericError("ib_probe: non-finite loss");
      grad::backward(loss);
      opt.step();
    }
  }

  // held-out evaluation at z = mu
  IBProbeResult res;
  grad::NoGradGuard ng;
  std::vector<std::size_t> all(held_flats.size());
  std::iota(all.begin(), all.end(), 0);
  std::array<std::size_t, 8> correct{};
  double kl_total = 0.0;
  for (std::size_t start = 0; start < all.size(); start += 64) {
    std::size_t end = std::min(start + 64, all.size());
    std::span<const std::size_t> idx(all.data() + start, end - start);
    Tensor flat = stack(held_flats, idx);
    Tensor eps = Tensor::zeros({cfg.ib_config.latent, idx.size()});
    ib::LatentSample lat = ib::ib_encode(m, flat, ib::Branch::kTeacher, eps);
    kl_total += ib::kl_to_standard_normal(lat.mu, lat.logvar).item();
    ib::DecoderOutput dec = ib::ib_decode(m, lat.z);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto predicted = ib::predict_states(dec, b).as_array();
      auto actual = held_out.scenes[idx[b]].states.as_array();
      for (std::size_t j = 0; j < 8; ++j) {
        if (predicted[j] == actual[j]) ++correct[j];
      }
    }
  }
  res.mean_kl = kl_total / static_cast<double>(held_flats.size());
  for (std::size_t j = 0; j < 8; ++j) {
    res.state_accuracy[j] =
        static_cast<double>(correct[j]) / static_cast<double>(held_flats.size());
  }
  return res;
}

double composite_loss_grad_check(std::uint64_t seed) {
  DistillConfig cfg;
  cfg.T = 4;
  cfg.student.conv_widths = {2, 2};
  cfg.student.head_hidden = {3};
  cfg.student.command_embed = 2;
  cfg.student.T = 4;
  cfg.ib_config = ib::IBConfig::micro();
  cfg.attn_config = attn::AttnConfig::micro();
  cfg.seed_init = seed;

  planner::PlannerConfig teacher_cfg = cfg.student;
  planner::PlannerModel teacher = planner::build_planner(teacher_cfg, seed ^ 0xABCDu);
  teacher.freeze();

  planner::PlannerModel student = planner::build_planner(cfg.student, seed);
  ib::IBModule ib_m = ib::build_ib(cfg.ib_config, Rng(seed).fork(1).seed());
  attn::AttnModule attn_m = attn::build_attn(cfg.attn_config, Rng(seed).fork(2).seed());

  // condition the check point: keep conv activations in the linear regime and
  // the waypoint keys spread so no path gradient sinks into the fd noise floor
  for (auto& [name, t] : student.params) {
    if (name.starts_with("backbone") && name.ends_with(".b")) {
      for (double& v : t.values()) v += 0.75;
    }
  }
  for (auto& [name, t] : attn_m.params) {
    if (name.starts_with("wp.")) {
      for (double& v : t.values()) v *= 4.0;
    }
    if (name.starts_with("bev.conv") && name.ends_with(".b")) {
      for (double& v : t.values()) v += 0.75;
    }
  }

  scenario::GenParams gp;
  gp.T = cfg.T;
  gp.seed = seed;
  std::vector<scenario::Scene> scenes{scenario::generate_scene(Rng(seed).fork(10).seed(), gp),
                                      scenario::generate_scene(Rng(seed).fork(11).seed(), gp)};
  std::vector<SampleData> samples;
  for (const scenario::Scene& s : scenes) samples.push_back(make_sample(s, teacher, cfg, true));
  std::vector<const SampleData*> batch{&samples[0], &samples[1]};

  Rng eps_rng(seed + 99);
  std::vector<double> ev(cfg.ib_config.latent * 2);
  for (double& v : ev) v = eps_rng.normal();
  Tensor eps({cfg.ib_config.latent, 2}, std::move(ev));

  std::vector<Tensor> params;
  for (auto& [n, t] : student.params) params.push_back(t);
  for (auto& [n, t] : ib_m.params) params.push_back(t);
  for (auto& [n, t] : attn_m.params) params.push_back(t);

  // pin the stop-gradient quantities at the base point; backward differentiates
  // the loss with these held constant, so the fd oracle must do the same
  PinnedStops pins;
  {
    grad::NoGradGuard ng;
    for (const SampleData* d : batch) {
      pins.weights.push_back(attn::waypoint_attention(attn_m, d->bev_aug, d->expert_wp).values());
    }
    std::size_t in_dim = cfg.ib_config.input_dim();
    std::vector<double> tf(in_dim * batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      for (std::size_t i = 0; i < in_dim; ++i) tf[i * batch.size() + b] = batch[b]->teacher_flat[i];
    }
    Tensor flat_t({in_dim, batch.size()}, std::move(tf));
    pins.z_teacher = ib::ib_encode(ib_m, flat_t, ib::Branch::kTeacher, eps).z.detached();
  }

  auto loss_fn = [&]() {
    LossComponents c = build_components(batch, student, ib_m, attn_m, cfg, eps, &pins);
    return total_loss(c, cfg);
  };
  return grad::grad_check(loss_fn, params);
}

}  // namespace plankd::train
