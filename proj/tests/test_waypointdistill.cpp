#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "plankd/gradcheck.hpp"
#include "plankd/ops.hpp"
#include "plankd/waypointdistill.hpp"

using namespace plankd;
using namespace plankd::attn;
using grad::Tensor;

namespace {

Tensor rand_tensor(grad::Shape shape, Rng& rng, double lo, double hi, bool rg = false) {
  std::size_t n = grad::shape_numel(shape);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), rg);
}

scenario::ObstaclePose moving_vehicle(float x, float y, float vx = 1.0f, float vy = 0.0f) {
  scenario::ObstaclePose o;
  o.x = x;
  o.y = y;
  o.vx = vx;
  o.vy = vy;
  return o;
}

}  // namespace

TEST_CASE("coord_augment appends normalized cell-center coordinates") {
  Tensor bev = Tensor::zeros({5, 32, 32});
  Tensor aug = coord_augment(bev);
  CHECK(aug.shape() == grad::Shape{7, 32, 32});
  double corner = -1.0 + 1.0 / 32.0;
  CHECK(aug.values()[5 * 32 * 32] == doctest::Approx(corner).epsilon(1e-12));  // x at (0,0)
  CHECK(aug.values()[6 * 32 * 32] == doctest::Approx(corner).epsilon(1e-12));  // y at (0,0)
  // center symmetry: coords at (i,j) equal the negated coords at (31-i, 31-j)
  for (std::size_t c : {std::size_t{5}, std::size_t{6}}) {
    for (std::size_t i : {std::size_t{0}, std::size_t{7}, std::size_t{13}}) {
      for (std::size_t j : {std::size_t{2}, std::size_t{30}}) {
        double a = aug.values()[(c * 32 + i) * 32 + j];
        double b = aug.values()[(c * 32 + (31 - i)) * 32 + (31 - j)];
        CHECK(a == doctest::Approx(-b).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("attention over a single waypoint is exactly [1]") {
  AttnModule m = build_attn(AttnConfig::micro(), 3);
  Tensor bev = coord_augment(Tensor::zeros({5, 32, 32}));
  Tensor wp({1, 2}, {3.0, 0.5});
  grad::NoGradGuard ng;
  Tensor a = waypoint_attention(m, bev, wp);
  CHECK(a.numel() == 1);
  CHECK(a.values()[0] == 1.0);
}

TEST_CASE("identical waypoints share attention equally") {
  AttnModule m = build_attn(AttnConfig::micro(), 5);
  Rng rng(6);
  Tensor bev = coord_augment(rand_tensor({5, 32, 32}, rng, 0, 1));
  Tensor wp({2, 2}, {4.0, -1.0, 4.0, -1.0});
  grad::NoGradGuard ng;
  Tensor a = waypoint_attention(m, bev, wp);
  CHECK(a.values()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a.values()[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("attention sums to one over random scenes and inits") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    AttnModule m = build_attn(AttnConfig::micro(), rng.next_u64());
    Tensor bev = coord_augment(rand_tensor({5, 32, 32}, rng, 0, 1));
    std::size_t t_count = 1 + rng.next_below(8);
    Tensor wp = rand_tensor({t_count, 2}, rng, -12, 12);
    grad::NoGradGuard ng;
    Tensor a = waypoint_attention(m, bev, wp);
    double total = 0.0;
    for (double v : a.values()) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("attention gradients flow through both encoders below 1e-4") {
  AttnModule m = build_attn(AttnConfig::micro(), 31);
  // condition the check point: spread keys apart and keep conv activations in
  // the linear regime so no path gradient sinks into the fd noise floor
  for (auto& [name, t] : m.params) {
    if (name.starts_with("wp.")) {
      for (double& v : t.values()) v *= 4.0;
    }
    if (name.starts_with("bev.conv") && name.ends_with(".b")) {
      for (double& v : t.values()) v += 0.75;
    }
  }
  Rng rng(32);
  Tensor bev = coord_augment(rand_tensor({5, 32, 32}, rng, 0, 1));
  Tensor wp = rand_tensor({3, 2}, rng, -8, 8);
  Tensor c = rand_tensor({3}, rng, -1, 1);
  std::vector<Tensor> params;
  for (auto& [n, t] : m.params) params.push_back(t);
  auto fn = [&]() {
    return grad::sum(grad::mul(waypoint_attention(m, bev, wp), c));
  };
  double err = grad::grad_check(fn, params);
  INFO("max rel err ", err);
  CHECK(err < 1e-4);
}

TEST_CASE("waypoint_attention rejects malformed trajectories") {
  AttnModule m = build_attn(AttnConfig::micro(), 3);
  Tensor bev = coord_augment(Tensor::zeros({5, 32, 32}));
  grad::NoGradGuard ng;
  CHECK_THROWS_AS(waypoint_attention(m, bev, Tensor::zeros({4, 3})), std::invalid_argument);
}

TEST_CASE("safety kernel spot values against the Gaussian formula") {
  std::vector<std::array<float, 2>> wps{{0, 0}};
  {
    std::vector<scenario::ObstaclePose> obs{moving_vehicle(0, 0)};
    auto psi = safety_kernel(wps, obs, 3.0);
    CHECK(psi[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  {
    std::vector<scenario::ObstaclePose> obs{moving_vehicle(3, 0)};
    auto psi = safety_kernel(wps, obs, 3.0);
    CHECK(psi[0] == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  }
  {
    std::vector<scenario::ObstaclePose> obs{moving_vehicle(3, 0), moving_vehicle(0, 4)};
    auto psi = safety_kernel(wps, obs, 3.0);
    CHECK(psi[0] == doctest::Approx(std::exp(-0.5) + std::exp(-16.0 / 18.0)).epsilon(1e-12));
  }
}

TEST_CASE("safety kernel: scalar loop oracle, moving filter, edge cases") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t t_count = 1 + rng.next_below(6);
    std::vector<std::array<float, 2>> wps(t_count);
    for (auto& w : wps) {
      w = {static_cast<float>(rng.uniform(-15, 15)), static_cast<float>(rng.uniform(-15, 15))};
    }
    std::vector<scenario::ObstaclePose> obs(rng.next_below(5));
    for (auto& o : obs) {
      o = moving_vehicle(static_cast<float>(rng.uniform(-15, 15)),
                         static_cast<float>(rng.uniform(-15, 15)),
                         static_cast<float>(rng.uniform(-2, 2)),
                         static_cast<float>(rng.uniform(-2, 2)));
    }
    double sigma = rng.uniform(0.5, 5.0);
    auto psi = safety_kernel(wps, obs, sigma);
    for (std::size_t i = 0; i < t_count; ++i) {
      double expect = 0.0;
      for (const auto& o : obs) {
        if (std::sqrt(static_cast<double>(o.vx) * o.vx + static_cast<double>(o.vy) * o.vy) <= 0.1)
          continue;
        double dx = static_cast<double>(wps[i][0]) - static_cast<double>(o.x);
        double dy = static_cast<double>(wps[i][1]) - static_cast<double>(o.y);
        expect += std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      }
      CHECK(psi[i] == doctest::Approx(expect).epsilon(1e-10));
      CHECK(psi[i] <= static_cast<double>(obs.size()) + 1e-12);
    }
  }
  // static obstacles are excluded
  std::vector<std::array<float, 2>> wps{{1, 0}};
  std::vector<scenario::ObstaclePose> parked{moving_vehicle(1, 0, 0.0f, 0.0f)};
  CHECK(safety_kernel(wps, parked, 3.0)[0] == 0.0);
  CHECK(safety_kernel(wps, {}, 3.0)[0] == 0.0);
  CHECK_THROWS_AS(safety_kernel(wps, parked, 0.0), std::invalid_argument);
}

TEST_CASE("ranking loss: ordered attention scores zero") {
  Tensor a({3}, {0.5, 0.3, 0.2});
  std::vector<double> psi{3.0, 2.0, 1.0};
  CHECK(ranking_loss(a, psi).item() == 0.0);
}

TEST_CASE("ranking loss: hand-evaluated two-waypoint example gives 0.8") {
  Tensor a({2}, {0.3, 0.7});
  std::vector<double> psi{2.0, 0.5};
  CHECK(ranking_loss(a, psi).item() == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("ranking loss: ties are skipped unless literal mode is on") {
  Tensor a({3}, {0.2, 0.5, 0.3});
  std::vector<double> psi{1.0, 1.0, 1.0};
  CHECK(ranking_loss(a, psi).item() == 0.0);
  // literal r=-1 on ties penalizes every unequal pair both ways
  CHECK(ranking_loss(a, psi, true).item() > 0.0);
  CHECK_THROWS_AS(ranking_loss(a, std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("ranking loss is invariant to positive rescaling of psi") {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t t_count = 2 + rng.next_below(5);
    Tensor a = rand_tensor({t_count}, rng, 0.0, 1.0);
    std::vector<double> psi(t_count);
    for (double& p : psi) p = rng.uniform(0.0, 2.0);
    std::vector<double> scaled(psi);
    double c = rng.uniform(0.1, 9.0);
    for (double& p : scaled) p *= c;
    CHECK(ranking_loss(a, psi).item() == ranking_loss(a, scaled).item());
  }
}

TEST_CASE("attentive waypoint loss: exact cases") {
  Tensor pred({4, 2}, {2, 0, 4, 0, 6, 0, 8, 0});
  CHECK(attentive_waypoint_loss(std::vector<double>{0.25, 0.25, 0.25, 0.25}, pred, pred).item() ==
        0.0);

  Tensor off({4, 2}, {2.4, 0, 4.4, 0, 6.4, 0, 8.4, 0});
  CHECK(attentive_waypoint_loss(std::vector<double>{0.25, 0.25, 0.25, 0.25}, off, pred).item() ==
        doctest::Approx(0.4).epsilon(1e-12));

  Tensor third_wrong({4, 2}, {2, 0, 4, 0, 9.5, 1, 8, 0});
  CHECK(attentive_waypoint_loss(std::vector<double>{1, 0, 0, 0}, third_wrong, pred).item() == 0.0);

  CHECK_THROWS_AS(attentive_waypoint_loss(std::vector<double>{0.5, 0.5}, pred, pred),
                  std::invalid_argument);
}

TEST_CASE("uniform attention recovers (1/T) of the unweighted trajectory L1 exactly") {
  Rng rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t t_count = 1 + rng.next_below(9);
    Tensor pred = rand_tensor({t_count, 2}, rng, -10, 10);
    Tensor target = rand_tensor({t_count, 2}, rng, -10, 10);
    std::vector<double> uniform(t_count, 1.0 / static_cast<double>(t_count));
    double weighted = attentive_waypoint_loss(uniform, pred, target).item();
    double unweighted = grad::abs_diff_sum(pred, target).item();
    CHECK(weighted == doctest::Approx(unweighted / static_cast<double>(t_count)).epsilon(1e-12));
  }
}

TEST_CASE("entropy loss: uniform value, degenerate case, uniform minimality") {
  Tensor uniform({4}, {0.25, 0.25, 0.25, 0.25});
  CHECK(entropy_loss(uniform).item() == doctest::Approx(std::log(0.25)).epsilon(1e-12));
  CHECK(std::log(0.25) == doctest::Approx(-1.38629).epsilon(1e-5));

  Tensor peaked({4}, {1.0, 0.0, 0.0, 0.0});
  CHECK(entropy_loss(peaked).item() == 0.0);

  Rng rng(41);
  for (int trial = 0; trial < 300; ++trial) {
    std::size_t t_count = 2 + rng.next_below(6);
    std::vector<double> p(t_count);
    double z = 0.0;
    for (double& v : p) {
      v = rng.uniform(0.01, 1.0);
      z += v;
    }
    for (double& v : p) v /= z;
    Tensor dist({t_count}, std::move(p));
    Tensor u = Tensor::full({t_count}, 1.0 / static_cast<double>(t_count));
    CHECK(entropy_loss(u).item() <= entropy_loss(dist).item() + 1e-15);
  }
}
