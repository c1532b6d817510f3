#include "plankd/planner.hpp"

#include <cmath>
#include <stdexcept>

#include "plankd/adam.hpp"
#include "plankd/errors.hpp"
#include "plankd/ops.hpp"

namespace plankd::planner {

using grad::Tensor;

namespace {

constexpr double kSpeedNorm = 8.0;

void validate_config(const PlannerConfig& c) {
  if (c.depth() < 2) {
    throw std::invalid_argument("planner: depth " + std::to_string(c.depth()) +
                                " has no middlemost layer (need >= 2)");
  }
  if (c.depth() > 5) {
    throw std::invalid_argument("planner: depth > 5 exhausts the 32x32 grid");
  }
  for (std::size_t w : c.conv_widths) {
    if (w == 0) throw std::invalid_argument("planner: zero-width conv layer");
  }
  for (std::size_t h : c.head_hidden) {
    if (h == 0) throw std::invalid_argument("planner: zero-width head layer");
  }
  if (c.head_hidden.empty()) throw std::invalid_argument("planner: empty motion head");
  if (c.T == 0) throw std::invalid_argument("planner: T must be positive");
  if (c.command_embed == 0) throw std::invalid_argument("planner: zero command embedding");
}

std::string layer_name(const char* group, std::size_t i, const char* leaf) {
  return std::string(group) + "." + std::to_string(i) + "." + leaf;
}

}  // namespace

PlannerConfig PlannerConfig::teacher_default() { return PlannerConfig{}; }

PlannerConfig PlannerConfig::student_default() {
  PlannerConfig c;
  c.conv_widths = {11, 22, 22, 44};
  c.head_hidden = {44};
  return c;
}

PlannerModel build_planner(const PlannerConfig& config, std::uint64_t init_seed) {
  validate_config(config);
  PlannerModel m;
  m.config = config;
  Rng rng(init_seed);

  std::size_t in_ch = scenario::kChannels;
  for (std::size_t l = 0; l < config.depth(); ++l) {
    std::size_t out_ch = config.conv_widths[l];
    m.params.add(layer_name("backbone", l, "w"),
                 fanin_uniform({out_ch, in_ch, 3, 3}, in_ch * 9, rng));
    m.params.add(layer_name("backbone", l, "b"), fanin_uniform({out_ch}, in_ch * 9, rng));
    in_ch = out_ch;
  }

  m.params.add("embed.w", fanin_uniform({config.command_embed, 4}, 4, rng));

  std::size_t in_dim = config.conv_widths.back() + 1 + config.command_embed;
  for (std::size_t l = 0; l < config.head_hidden.size(); ++l) {
    std::size_t out_dim = config.head_hidden[l];
    m.params.add(layer_name("head", l, "w"), fanin_uniform({out_dim, in_dim}, in_dim, rng));
    m.params.add(layer_name("head", l, "b"), fanin_uniform({out_dim}, in_dim, rng));
    in_dim = out_dim;
  }
  m.params.add("head.out.w", fanin_uniform({2 * config.T, in_dim}, in_dim, rng));
  m.params.add("head.out.b", fanin_uniform({2 * config.T}, in_dim, rng));
  return m;
}

SceneInput scene_input(const scenario::Scene& scene) {
  return {scenario::bev_tensor(scene), static_cast<double>(scene.speed), scene.command};
}

PlannerOutput planner_forward(const PlannerModel& model, const SceneInput& input) {
  const PlannerConfig& cfg = model.config;
  if (input.bev.shape() != grad::Shape{scenario::kChannels, scenario::kGrid, scenario::kGrid}) {
    throw std::invalid_argument("planner_forward: bev shape mismatch " +
                                grad::shape_str(input.bev.shape()) + " vs [5,32,32]");
  }

  PlannerOutput out;
  Tensor x = input.bev;
  for (std::size_t l = 0; l < cfg.depth(); ++l) {
    const Tensor& w = model.params.at(layer_name("backbone", l, "w"));
    const Tensor& b = model.params.at(layer_name("backbone", l, "b"));
    x = grad::leaky_relu(grad::conv2d(x, w, b, 2, 1));
    if (l + 1 == cfg.mid_layer()) out.mid_feature = x;
  }

  Tensor pooled = grad::spatial_mean(x);
  Tensor speed = Tensor::scalar(input.speed / kSpeedNorm);
  Tensor onehot = Tensor::zeros({4});
  onehot.values()[static_cast<std::size_t>(input.command)] = 1.0;
  Tensor embed = grad::matmul(model.params.at("embed.w"), onehot);

  std::array<Tensor, 3> parts{pooled, speed, embed};
  Tensor h = grad::concat_vec(parts);
  for (std::size_t l = 0; l < cfg.head_hidden.size(); ++l) {
    const Tensor& w = model.params.at(layer_name("head", l, "w"));
    const Tensor& b = model.params.at(layer_name("head", l, "b"));
    h = grad::leaky_relu(grad::add(grad::matmul(w, h), b));
  }
  Tensor flat = grad::add(grad::matmul(model.params.at("head.out.w"), h),
                          model.params.at("head.out.b"));
  out.waypoints = grad::reshape(flat, {cfg.T, 2});
  return out;
}

double waypoint_l1(const std::vector<std::array<float, 2>>& pred,
                   const std::vector<std::array<float, 2>>& target) {
  if (pred.size() != target.size() || pred.empty()) {
    throw std::invalid_argument("waypoint_l1: trajectory length mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    s += std::abs(static_cast<double>(pred[i][0]) - target[i][0]) +
         std::abs(static_cast<double>(pred[i][1]) - target[i][1]);
  }
  return s / static_cast<double>(pred.size());
}

std::vector<std::array<float, 2>> predict_waypoints(const PlannerModel& model,
                                                    const scenario::Scene& scene) {
  grad::NoGradGuard ng;
  PlannerOutput out = planner_forward(model, scene_input(scene));
  std::vector<std::array<float, 2>> traj(model.config.T);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    traj[i] = {static_cast<float>(out.waypoints.values()[2 * i]),
               static_cast<float>(out.waypoints.values()[2 * i + 1])};
  }
  return traj;
}

ImitationReport train_imitation(PlannerModel& model, const scenario::Dataset& data,
                                const ImitationConfig& cfg) {
  if (data.scenes.empty()) throw std::invalid_argument("train_imitation: empty dataset");
  if (data.T != model.config.T) {
    throw std::invalid_argument("train_imitation: dataset T=" + std::to_string(data.T) +
                                " vs model T=" + std::to_string(model.config.T));
  }

  grad::Adam opt(cfg.lr);
  for (auto& [name, t] : model.params) opt.register_param(name, t);

  std::vector<Tensor> targets;
  targets.reserve(data.scenes.size());
  std::vector<SceneInput> inputs;
  inputs.reserve(data.scenes.size());
  for (const scenario::Scene& s : data.scenes) {
    inputs.push_back(scene_input(s));
    std::vector<double> tv;
    tv.reserve(2 * data.T);
    for (const auto& w : s.expert_traj) {
      tv.push_back(w[0]);
      tv.push_back(w[1]);
    }
    targets.emplace_back(grad::Shape{data.T, 2}, std::move(tv), false);
  }

  Rng shuffle_rng(cfg.seed);
  ImitationReport report;
  std::size_t step = 0;
  double inv_t = 1.0 / static_cast<double>(data.T);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(data.scenes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng er = shuffle_rng.fork(epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[er.next_below(i)]);
    }

    double epoch_sum = 0.0;
    std::size_t epoch_n = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(start + cfg.batch_size, order.size());
      grad::Graph graph;
      std::vector<Tensor> sample_losses;
      for (std::size_t k = start; k < end; ++k) {
        PlannerOutput out = planner_forward(model, inputs[order[k]]);
        sample_losses.push_back(
            grad::scale(grad::abs_diff_sum(out.waypoints, targets[order[k]]), inv_t));
      }
      Tensor loss = grad::mean(grad::concat_vec(sample_losses));
      double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw NumericError("train_imitation: non-finite loss at step " + std::to_string(step));
      }
      grad::backward(loss);
      opt.step();
      epoch_sum += lv * static_cast<double>(end - start);
      epoch_n += end - start;
      ++step;
    }
    report.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_n));
  }
  return report;
}

}  // namespace plankd::planner
