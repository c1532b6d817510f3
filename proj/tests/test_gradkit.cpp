#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "plankd/adam.hpp"
#include "plankd/gradcheck.hpp"
#include "plankd/ops.hpp"
#include "plankd/rng.hpp"
#include "plankd/tensor.hpp"

using namespace plankd;
using grad::Tensor;

namespace {

Tensor rand_tensor(grad::Shape shape, Rng& rng, double lo, double hi, bool requires_grad = true) {
  std::size_t n = grad::shape_numel(shape);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// keeps elementwise inputs away from kinks at 0
Tensor rand_tensor_offzero(grad::Shape shape, Rng& rng, bool requires_grad = true) {
  std::size_t n = grad::shape_numel(shape);
  std::vector<double> v(n);
  for (double& x : v) {
    double m = rng.uniform(0.05, 1.5);
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor weighted_sum(const Tensor& t, Rng& rng) {
  Tensor c = rand_tensor(t.shape(), rng, -1.0, 1.0, false);
  return grad::sum(grad::mul(t, c));
}

}  // namespace

TEST_CASE("softmax of a single-element sequence is exactly one") {
  Tensor x({1}, {4.2});
  Tensor s = grad::softmax_lastdim(x);
  CHECK(s.values()[0] == 1.0);
}

TEST_CASE("gaussian reparameterization identity at mu=0, logvar=0") {
  Tensor mu = Tensor::zeros({4});
  Tensor lv = Tensor::zeros({4});
  Tensor eps({4}, {0.3, -1.7, 2.5, 0.0});
  Tensor z = grad::gaussian_reparam(mu, lv, eps);
  for (std::size_t i = 0; i < 4; ++i) CHECK(z.values()[i] == eps.values()[i]);
}

TEST_CASE("matmul with the identity returns the input") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor out = grad::matmul(a, eye);
  CHECK(out.values() == a.values());
}

TEST_CASE("backward of sum(x^2) at x=[3] gives grad [6]") {
  Tensor x({1}, {3.0}, true);
  {
    grad::Graph g;
    Tensor loss = grad::sum(grad::mul(x, x));
    grad::backward(loss);
  }
  CHECK((*x.grad())[0] == doctest::Approx(6.0).epsilon(1e-12));

  // central difference agrees to < 1e-6 relative
  std::vector<Tensor> params{x};
  double err = grad::grad_check([&]() { return grad::sum(grad::mul(x, x)); }, params);
  CHECK(err < 1e-6);
}

TEST_CASE("constant loss leaves an unused leaf with zero grads") {
  Tensor x({3}, {1, 2, 3}, true);
  Tensor c({2}, {5, 7});
  grad::Graph g;
  Tensor loss = grad::sum(grad::mul(c, c));
  grad::backward(loss);
  for (double v : *x.grad()) CHECK(v == 0.0);
}

TEST_CASE("L1 subgradient convention: sign away from the kink, zero at it") {
  Tensor x({2}, {1, 2}, true);
  Tensor y({2}, {0, 2});
  grad::Graph g;
  Tensor loss = grad::abs_diff_sum(x, y);
  grad::backward(loss);
  CHECK((*x.grad())[0] == 1.0);
  CHECK((*x.grad())[1] == 0.0);
}

TEST_CASE("backward rejects non-scalar and detached losses") {
  Tensor x({2}, {1, 2}, true);
  {
    grad::Graph g;
    Tensor v = grad::mul(x, x);
    CHECK_THROWS_WITH_AS(grad::backward(v), doctest::Contains("scalar"), std::invalid_argument);
  }
  {
    Tensor loss;
    {
      grad::Graph g;
      loss = grad::sum(grad::mul(x, x));
      grad::backward(loss);  // consumes the graph
      CHECK_THROWS_WITH_AS(grad::backward(loss), doctest::Contains("detached"),
                           std::runtime_error);
    }
  }
}

TEST_CASE("ops reject shape mismatches naming both shapes") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_WITH_AS(grad::add(a, b), doctest::Contains("[2,3]"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(grad::matmul(a, a), doctest::Contains("matmul"), std::invalid_argument);
}

TEST_CASE("strict mode rejects non-finite inputs") {
  Tensor a({2}, {1.0, std::nan("")});
  Tensor b({2}, {1.0, 2.0});
  grad::set_strict_finite(true);
  CHECK_THROWS_AS(grad::add(a, b), std::invalid_argument);
  grad::set_strict_finite(false);
  CHECK_NOTHROW(grad::add(a, b));
}

TEST_CASE("requires-grad op outside a graph is rejected") {
  Tensor x({2}, {1, 2}, true);
  CHECK_THROWS_AS(grad::scale(x, 2.0), std::runtime_error);
  grad::NoGradGuard ng;
  CHECK_NOTHROW(grad::scale(x, 2.0));
}

TEST_CASE("grad_check is exact for quadratics and zero for constants") {
  Rng rng(7);
  Tensor x = rand_tensor({5}, rng, -2, 2);
  std::vector<Tensor> params{x};
  double err = grad::grad_check([&]() { return grad::sum(grad::mul(x, x)); }, params);
  CHECK(err < 1e-7);

  Tensor c({3}, {1, 2, 3});
  double cerr = grad::grad_check([&]() { return grad::sum(grad::mul(c, c)); }, params);
  CHECK(cerr == 0.0);
}

TEST_CASE("grad_check rejects a non-deterministic loss") {
  Tensor x({1}, {1.0}, true);
  std::vector<Tensor> params{x};
  auto rng = std::make_shared<Rng>(3);
  auto noisy = [&, rng]() {
    Tensor n({1}, {rng->uniform()});
    return grad::sum(grad::add(x, n));
  };
  CHECK_THROWS_WITH_AS(grad::grad_check(noisy, params), doctest::Contains("deterministic"),
                       std::runtime_error);
}

TEST_CASE("adam: zero grad leaves parameters unchanged") {
  Tensor p({3}, {1, 2, 3}, true);
  grad::Adam opt(0.1);
  opt.register_param("p", p);
  opt.step();
  CHECK(p.values() == std::vector<double>{1, 2, 3});
}

TEST_CASE("adam: bias-corrected first step moves by ~lr") {
  Tensor p({1}, {0.5}, true);
  (*p.grad())[0] = 1.0;
  grad::Adam opt(0.1);
  opt.register_param("p", p);
  opt.step();
  CHECK(p.values()[0] == doctest::Approx(0.4).epsilon(1e-7));
  CHECK((*p.grad())[0] == 0.0);  // cleared afterwards
}

TEST_CASE("adam: missing grad is rejected naming the parameter") {
  Tensor p({2}, {1, 2}, false);
  grad::Adam opt(0.1);
  CHECK_THROWS_WITH_AS(opt.register_param("theta", std::move(p)), doctest::Contains("theta"),
                       std::invalid_argument);
}

TEST_CASE("adam: identical seeded runs produce bit-identical parameters") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor p = rand_tensor({8}, rng, -1, 1);
    grad::Adam opt(0.05);
    opt.register_param("p", p);
    for (int it = 0; it < 25; ++it) {
      grad::Graph g;
      Tensor t = rand_tensor({8}, rng, -1, 1, false);
      Tensor loss = grad::sum(grad::mul(grad::sub(p, t), grad::sub(p, t)));
      grad::backward(loss);
      opt.step();
    }
    return p.values();
  };
  CHECK(run(42) == run(42));
}

TEST_CASE("softmax rows are distributions over 1000 random inputs") {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t n = 1 + rng.next_below(8);
    Tensor x = rand_tensor({2, n}, rng, -30, 30, false);
    Tensor s = grad::softmax_lastdim(x);
    for (std::size_t r = 0; r < 2; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double v = s.values()[r * n + j];
        CHECK(v >= 0.0);
        total += v;
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("forward is pure: repeated evaluation is bit-identical") {
  Rng rng(5);
  Tensor x = rand_tensor({3, 7, 7}, rng, -1, 1, false);
  Tensor w = rand_tensor({4, 3, 3, 3}, rng, -1, 1, false);
  Tensor b = rand_tensor({4}, rng, -1, 1, false);
  auto a = grad::conv2d(x, w, b, 2, 1).values();
  auto bvals = grad::conv2d(x, w, b, 2, 1).values();
  CHECK(a == bvals);
}

TEST_CASE("channel mean of constant channels is exact") {
  for (double c : {3.0, 0.5, -2.0}) {
    Tensor x = Tensor::full({5, 4, 4}, c);
    Tensor m = grad::channel_mean(x);
    for (double v : m.values()) CHECK(v == c);
  }
}

TEST_CASE("bilinear resize to the same size is the identity") {
  Rng rng(9);
  Tensor x = rand_tensor({2, 6, 5}, rng, -3, 3, false);
  Tensor y = grad::bilinear_resize(x, 6, 5);
  CHECK(y.values() == x.values());
}

TEST_CASE("xlogx treats tiny entries as zero") {
  Tensor a({3}, {0.0, 1e-13, 1.0});
  CHECK(grad::xlogx_sum(a).item() == 0.0);  // 1*ln(1) = 0 and small entries skipped
  Tensor b({2}, {0.5, 0.5});
  CHECK(grad::xlogx_sum(b).item() == doctest::Approx(std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("rng: counter-based draws are reproducible and forks are independent") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng f1 = Rng(123).fork(1);
  Rng f2 = Rng(123).fork(2);
  CHECK(f1.next_u64() != f2.next_u64());
  double m = 0.0;
  Rng g(77);
  for (int i = 0; i < 10000; ++i) m += g.normal();
  CHECK(std::abs(m / 10000.0) < 0.05);
}

TEST_CASE("every cataloged differentiable op passes grad_check at 100 random points") {
  Rng rng(2026);
  constexpr int kTrials = 100;
  constexpr double kTol = 1e-4;

  auto check_max = [&](auto make_loss_and_params) {
    double worst = 0.0;
    for (int trial = 0; trial < kTrials; ++trial) {
      auto [loss_fn, params] = make_loss_and_params();
      auto p = params;
      worst = std::max(worst, grad::grad_check(loss_fn, p));
    }
    return worst;
  };

  using LP = std::pair<std::function<Tensor()>, std::vector<Tensor>>;

  SUBCASE("elementwise") {
    CHECK(check_max([&]() -> LP {
            Tensor a = rand_tensor({6}, rng, -2, 2);
            Tensor b = rand_tensor({6}, rng, -2, 2);
            Tensor c = rand_tensor({6}, rng, -1, 1, false);
            auto fn = [=]() {
              Tensor u = grad::add(a, b);
              Tensor v = grad::sub(u, b);
              Tensor w = grad::mul(v, a);
              Tensor s = grad::add_scalar(grad::scale(w, 1.7), 0.3);
              return grad::sum(grad::mul(s, c));
            };
            return {fn, {a, b}};
          }) < kTol);
  }
  SUBCASE("activations") {
    CHECK(check_max([&]() -> LP {
            Tensor x = rand_tensor_offzero({8}, rng);
            Rng local = rng.fork(rng.next_u64());
            Tensor c = rand_tensor({8}, local, -1, 1, false);
            auto fn = [=]() {
              Tensor t = grad::add(grad::leaky_relu(x), grad::relu(x));
              t = grad::add(t, grad::sigmoid(x));
              t = grad::add(t, grad::softplus(x));
              return grad::sum(grad::mul(t, c));
            };
            return {fn, {x}};
          }) < kTol);
  }
  SUBCASE("exp log clamp") {
    CHECK(check_max([&]() -> LP {
            Tensor x = rand_tensor({6}, rng, 0.3, 2.5);
            Rng local = rng.fork(rng.next_u64());
            Tensor c = rand_tensor({6}, local, -1, 1, false);
            auto fn = [=]() {
              Tensor t = grad::add(grad::exp(grad::scale(x, -0.5)), grad::log(x));
              t = grad::add(t, grad::clamp(x, -1.0, 2.0));
              return grad::sum(grad::mul(t, c));
            };
            return {fn, {x}};
          }) < kTol);
  }
  SUBCASE("matmul and matvec") {
    CHECK(check_max([&]() -> LP {
            Tensor a = rand_tensor({3, 4}, rng, -1, 1);
            Tensor b = rand_tensor({4, 2}, rng, -1, 1);
            Tensor v = rand_tensor({4}, rng, -1, 1);
            Rng local = rng.fork(rng.next_u64());
            Tensor c = rand_tensor({3, 2}, local, -1, 1, false);
            Tensor cv = rand_tensor({3}, local, -1, 1, false);
            auto fn = [=]() {
              Tensor mm = grad::sum(grad::mul(grad::matmul(a, b), c));
              Tensor mv = grad::sum(grad::mul(grad::matmul(a, v), cv));
              return grad::add(mm, mv);
            };
            return {fn, {a, b, v}};
          }) < kTol);
  }
  SUBCASE("conv2d") {
    CHECK(check_max([&]() -> LP {
            Tensor x = rand_tensor({2, 5, 5}, rng, -1, 1);
            Tensor w = rand_tensor({3, 2, 3, 3}, rng, -1, 1);
            Tensor b = rand_tensor({3}, rng, -1, 1);
            Rng local = rng.fork(rng.next_u64());
            Tensor c = rand_tensor({3, 3, 3}, local, -1, 1, false);
            auto fn = [=]() { return grad::sum(grad::mul(grad::conv2d(x, w, b, 2, 1), c)); };
            return {fn, {x, w, b}};
          }) < kTol);
  }
  SUBCASE("softmax") {
    CHECK(check_max([&]() -> LP {
            Tensor x = rand_tensor({2, 5}, rng, -3, 3);
            Rng local = rng.fork(rng.next_u64());
            Tensor c = rand_tensor({2, 5}, local, -1, 1, false);
            auto fn = [=]() { return grad::sum(grad::mul(grad::softmax_lastdim(x), c)); };
            return {fn, {x}};
          }) < kTol);
  }
  SUBCASE("reductions") {
    CHECK(check_max([&]() -> LP {
            Tensor x = rand_tensor({4, 3}, rng, -2, 2);
            Rng local = rng.fork(rng.next_u64());
            Tensor c0 = rand_tensor({3}, local, -1, 1, false);
            Tensor c1 = rand_tensor({4}, local, -1, 1, false);
            auto fn = [=]() {
              Tensor t = grad::add(grad::sum(grad::mul(grad::sum_axis(x, 0), c0)),
                                   grad::sum(grad::mul(grad::sum_axis(x, 1), c1)));
              return grad::add(t, grad::add(grad::sum(x), grad::mean(x)));
            };
            return {fn, {x}};
          }) < kTol);
  }
  SUBCASE("abs-diff reductions") {
    CHECK(check_max([&]() -> LP {
            Tensor a = rand_tensor({4, 2}, rng, -2, 2);
            Tensor off = rand_tensor_offzero({4, 2}, rng, false);
            std::vector<double> bt(8);
            for (std::size_t i = 0; i < 8; ++i) bt[i] = a.values()[i] + off.values()[i];
            Tensor b({4, 2}, std::move(bt), false);
            std::vector<double> w{0.1, 0.4, 0.3, 0.2};
            auto fn = [=]() {
              return grad::add(grad::abs_diff_sum(a, b),
                               grad::weighted_row_l1(a, b, std::span<const double>(w)));
            };
            return {fn, {a}};
          }) < kTol);
  }
  SUBCASE("xlogx") {
    CHECK(check_max([&]() -> LP {
            Tensor a = rand_tensor({5}, rng, 0.05, 2.0);
            auto fn = [=]() { return grad::xlogx_sum(a); };
            return {fn, {a}};
          }) < kTol);
  }
  SUBCASE("structural ops") {
    CHECK(check_max([&]() -> LP {
            Tensor x = rand_tensor({2, 4, 4}, rng, -1, 1);
            Rng local = rng.fork(rng.next_u64());
            Tensor c1 = rand_tensor({16}, local, -1, 1, false);
            Tensor c2 = rand_tensor({2}, local, -1, 1, false);
            auto fn = [=]() {
              Tensor cm = grad::channel_mean(x);
              Tensor t = grad::sum(grad::mul(grad::reshape(grad::bilinear_resize(cm, 4, 4), {16}),
                                             c1));
              return grad::add(t, grad::sum(grad::mul(grad::spatial_mean(x), c2)));
            };
            return {fn, {x}};
          }) < kTol);
  }
  SUBCASE("resize up and down") {
    CHECK(check_max([&]() -> LP {
            Tensor x = rand_tensor({1, 5, 7}, rng, -1, 1);
            Rng local = rng.fork(rng.next_u64());
            Tensor cu = rand_tensor({1, 8, 9}, local, -1, 1, false);
            Tensor cd = rand_tensor({1, 3, 4}, local, -1, 1, false);
            auto fn = [=]() {
              return grad::add(grad::sum(grad::mul(grad::bilinear_resize(x, 8, 9), cu)),
                               grad::sum(grad::mul(grad::bilinear_resize(x, 3, 4), cd)));
            };
            return {fn, {x}};
          }) < kTol);
  }
  SUBCASE("concat stack row bias reparam") {
    CHECK(check_max([&]() -> LP {
            Tensor a = rand_tensor({3}, rng, -1, 1);
            Tensor b = rand_tensor({3}, rng, -1, 1);
            Tensor m = rand_tensor({3, 2}, rng, -1, 1);
            Tensor bias = rand_tensor({3}, rng, -1, 1);
            Tensor lv = rand_tensor({3}, rng, -1.5, 1.5);
            Rng local = rng.fork(rng.next_u64());
            Tensor eps = rand_tensor({3}, local, -1, 1, false);
            Tensor c6 = rand_tensor({6}, local, -1, 1, false);
            Tensor c32 = rand_tensor({3, 2}, local, -1, 1, false);
            Tensor c2 = rand_tensor({2}, local, -1, 1, false);
            Tensor c3 = rand_tensor({3}, local, -1, 1, false);
            auto fn = [=]() {
              std::array<Tensor, 2> parts{a, b};
              Tensor cc = grad::sum(grad::mul(grad::concat_vec(parts), c6));
              std::array<Tensor, 2> cols{a, b};
              Tensor st = grad::sum(grad::mul(grad::stack_cols(cols), c32));
              Tensor rw = grad::sum(grad::mul(grad::row(m, 1), c2));
              Tensor ab = grad::sum(grad::mul(grad::add_bias_cols(m, bias), c32));
              Tensor rp = grad::sum(grad::mul(grad::gaussian_reparam(a, lv, eps), c3));
              return grad::add(grad::add(grad::add(cc, st), grad::add(rw, ab)), rp);
            };
            return {fn, {a, b, m, bias, lv}};
          }) < kTol);
  }
}
