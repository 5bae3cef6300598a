// Copyright (c) 2026 the paca authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "paca/autodiff.hpp"
#include "paca/nn.hpp"
#include "paca/rng.hpp"

using namespace paca;

namespace {

using ScalarFn = std::function<Var(std::vector<Var>&)>;

// Central finite differences of a scalar-valued graph against the analytic
// gradient, elementwise.
void fd_check(const ScalarFn& fn, std::vector<Tensor> inputs, double tol = 1e-6,
              double h = 1e-5) {
  std::vector<Var> vars;
  for (auto& t : inputs) vars.emplace_back(t, true);
  Var out = fn(vars);
  REQUIRE(out.val().size() == 1);
  auto gs = grad(out, vars);

  for (std::size_t vi = 0; vi < inputs.size(); ++vi) {
    for (std::int64_t j = 0; j < inputs[vi].size(); ++j) {
      auto eval_at = [&](double delta) {
        std::vector<Var> vs;
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          Tensor t = inputs[k];
          if (k == vi) t[j] += delta;
          vs.emplace_back(t, false);
        }
        NoGradGuard ng;
        return fn(vs).val()[0];
      };
      const double fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
      const double an = gs[vi].val()[j];
      const double err = std::abs(an - fd) / (std::abs(fd) + 1e-6);
      CAPTURE(vi);
      CAPTURE(j);
      CHECK(err < tol);
    }
  }
}

Tensor rand_t(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  return rand_uniform(std::move(s), rng, lo, hi);
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  Tensor a = rand_t({3, 4}, 1);
  Tensor b = rand_t({3, 4}, 2, 0.5, 1.5);  // positive, safe for div/log/sqrt

  fd_check([](std::vector<Var>& v) { return sum_all(mul(add(v[0], v[1]), sub(v[0], v[1]))); },
           {a, b});
  fd_check([](std::vector<Var>& v) { return sum_all(div(v[0], v[1])); }, {a, b});
  fd_check([](std::vector<Var>& v) { return sum_all(vexp(muls(v[0], 0.7))); }, {a});
  fd_check([](std::vector<Var>& v) { return sum_all(vlog(v[0])); }, {b});
  fd_check([](std::vector<Var>& v) { return sum_all(vtanh(v[0])); }, {a});
  fd_check([](std::vector<Var>& v) { return sum_all(vsqrt(v[0])); }, {b});
  fd_check([](std::vector<Var>& v) { return sum_all(adds(neg(v[0]), 2.0)); }, {a});
}

TEST_CASE("relu and abs gradients away from the kink") {
  Tensor a = rand_t({5, 5}, 3);
  for (std::int64_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i]) < 0.05) a[i] = 0.1;  // keep clear of the nondifferentiable point
  }
  fd_check([](std::vector<Var>& v) { return sum_all(relu(v[0])); }, {a});
  fd_check([](std::vector<Var>& v) { return sum_all(vabs(v[0])); }, {a});
}

TEST_CASE("matmul and bmm match finite differences") {
  fd_check([](std::vector<Var>& v) { return sum_all(matmul(v[0], v[1])); },
           {rand_t({3, 4}, 4), rand_t({4, 2}, 5)});
  fd_check([](std::vector<Var>& v) {
    return sum_all(mul(bmm(v[0], v[1]), bmm(v[0], v[1])));
  },
           {rand_t({2, 3, 4}, 6), rand_t({2, 4, 3}, 7)});
}

TEST_CASE("reduction/broadcast pairs match finite differences") {
  Tensor a = rand_t({4, 6}, 8);
  Tensor v4 = rand_t({4}, 9);
  Tensor img = rand_t({2, 3, 4, 4}, 10);

  fd_check([](std::vector<Var>& v) { return sum_all(mul(expand_cols(sum_rows(v[0]), 6), v[0])); }, {a});
  fd_check([](std::vector<Var>& v) { return sum_all(mul(expand_rows(sum_cols(v[0]), 4), v[0])); }, {a});
  fd_check([](std::vector<Var>& v) { return sum_all(mul(v[0], expand_cols(v[1], 6))); }, {a, v4});
  fd_check([](std::vector<Var>& v) {
    return sum_all(mul(channel_expand(channel_sum(v[0]), 2, 4, 4), v[0]));
  }, {img});
  fd_check([](std::vector<Var>& v) {
    return sum_all(mul(batch_expand(sum_keep_batch(v[0]), v[0].shape()), v[0]));
  }, {img});
  fd_check([](std::vector<Var>& v) {
    return sum_all(expand_scalar(sum_all(mul(v[0], v[0])), {3, 2}));
  }, {rand_t({3, 2}, 11)});
}

TEST_CASE("indexing ops match finite differences") {
  Tensor a = rand_t({4, 5}, 12);
  std::vector<std::int64_t> idx = {2, 0, 4, 1};
  fd_check([&](std::vector<Var>& v) {
    return sum_all(mul(take_per_row(v[0], idx), take_per_row(v[0], idx)));
  }, {a});
  Tensor w = rand_t({4}, 13);
  fd_check([&](std::vector<Var>& v) {
    return sum_all(mul(scatter_per_row(v[0], idx, 5), scatter_per_row(v[0], idx, 5)));
  }, {w});
}

TEST_CASE("im2col/col2im are adjoint and differentiate correctly") {
  ConvGeom g{3, 3, 2, 1};
  Tensor x = rand_t({2, 3, 6, 6}, 14);
  const std::int64_t oh = conv_out_dim(6, 3, 2, 1);
  Tensor y = rand_t({2 * oh * oh, 3 * 9}, 15);

  // <im2col(x), y> == <x, col2im(y)>
  NoGradGuard ng;
  Var xv = Var::constant(x), yv = Var::constant(y);
  double lhs = dot(im2col(xv, g).val(), y);
  double rhs = dot(x, col2im(yv, Shape{2, 3, 6, 6}, g).val());
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("im2col gradients match finite differences") {
  ConvGeom g{3, 3, 1, 1};
  fd_check([&](std::vector<Var>& v) {
    Var c = im2col(v[0], g);
    return sum_all(mul(c, c));
  }, {rand_t({1, 2, 5, 5}, 16)});
}

TEST_CASE("triu_flatten/expand adjoint pair") {
  Tensor m = rand_t({2, 4, 4}, 17);
  Tensor t = rand_t({2, 10}, 18);
  {
    NoGradGuard ng;
    double lhs = dot(triu_flatten(Var::constant(m)).val(), t);
    double rhs = dot(m, triu_expand(Var::constant(t), 4).val());
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
  fd_check([](std::vector<Var>& v) {
    Var f = triu_flatten(v[0]);
    return sum_all(mul(f, f));
  }, {m});
}

TEST_CASE("permute round trip and gradient") {
  Tensor x = rand_t({2, 3, 4, 5}, 19);
  Var xv = Var::constant(x);
  Var p = permute(xv, {0, 3, 1, 2});
  CHECK(p.shape() == Shape{2, 5, 3, 4});
  Var back = permute(p, {0, 2, 3, 1});
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(back.val()[i] == x[i]);
  fd_check([](std::vector<Var>& v) {
    Var p2 = permute(v[0], {1, 0});
    return sum_all(mul(p2, p2));
  }, {rand_t({3, 4}, 20)});
}

TEST_CASE("second-order: Hessian-vector products are exact") {
  // f(x) = sum(x^3): grad = 3x^2, and d/dx <grad, w> = 6x*w.
  Tensor x0 = rand_t({4}, 21, 0.5, 1.5);
  Tensor w0 = rand_t({4}, 22);
  Var x(x0, true);
  Var f = sum_all(mul(mul(x, x), x));
  auto g = grad(f, {x}, /*create_graph=*/true);
  REQUIRE(g[0].requires_grad());
  Var gw = sum_all(mul(g[0], Var::constant(w0)));
  auto h = grad(gw, {x});
  for (std::int64_t i = 0; i < 4; ++i) {
    CHECK(h[0].val()[i] == doctest::Approx(6.0 * x0[i] * w0[i]).epsilon(1e-10));
  }
}

TEST_CASE("second-order through tanh and matmul") {
  // f = sum(tanh(x W)); HVP checked against finite differences of the
  // first-order gradient.
  Tensor x0 = rand_t({2, 3}, 23);
  Tensor w0 = rand_t({3, 2}, 24);
  Tensor dir = rand_t({2, 3}, 25);

  auto grad_at = [&](const Tensor& xt) {
    Var x(xt, true);
    Var f = sum_all(vtanh(matmul(x, Var::constant(w0))));
    return grad(f, {x})[0].val();
  };

  Var x(x0, true);
  Var f = sum_all(vtanh(matmul(x, Var::constant(w0))));
  auto g = grad(f, {x}, true);
  Var gdir = sum_all(mul(g[0], Var::constant(dir)));
  auto hv = grad(gdir, {x});

  const double h = 1e-5;
  Tensor xp = x0, xm = x0;
  for (std::int64_t i = 0; i < x0.size(); ++i) {
    xp[i] += h * dir[i];
    xm[i] -= h * dir[i];
  }
  Tensor gp = grad_at(xp), gm = grad_at(xm);
  for (std::int64_t i = 0; i < x0.size(); ++i) {
    const double fd = (gp[i] - gm[i]) / (2.0 * h);
    CHECK(hv[0].val()[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("grad without create_graph yields constants") {
  Var x(rand_t({3}, 26), true);
  Var f = sum_all(mul(x, x));
  auto g = grad(f, {x}, false);
  CHECK_FALSE(g[0].requires_grad());
}

TEST_CASE("gradients for unused inputs are zero") {
  Var x(rand_t({3}, 27), true);
  Var y(rand_t({3}, 28), true);
  Var f = sum_all(mul(x, x));
  auto g = grad(f, {x, y});
  for (std::int64_t i = 0; i < 3; ++i) CHECK(g[1].val()[i] == 0.0);
}

TEST_CASE("no-grad mode builds constant nodes") {
  Var x(rand_t({3}, 29), true);
  NoGradGuard ng;
  Var y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("forward evaluation is deterministic") {
  Tensor a = rand_t({16, 16}, 30);
  Tensor b = rand_t({16, 16}, 31);
  NoGradGuard ng;
  Tensor r1 = matmul(Var::constant(a), Var::constant(b)).val();
  Tensor r2 = matmul(Var::constant(a), Var::constant(b)).val();
  for (std::int64_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
}

TEST_CASE("cross entropy matches hand computation and differentiates") {
  // Two rows, explicit softmax cross-entropy.
  Tensor z({2, 3}, {1.0, 2.0, 0.5, -0.3, 0.1, 0.4});
  std::vector<std::int64_t> labels = {1, 0};
  Var zv(z, true);
  Var ce = nn::cross_entropy_per_sample(zv, labels);
  for (int i = 0; i < 2; ++i) {
    double m = std::max({z[i * 3], z[i * 3 + 1], z[i * 3 + 2]});
    double s = 0.0;
    for (int j = 0; j < 3; ++j) s += std::exp(z[i * 3 + j] - m);
    double expect = std::log(s) + m - z[i * 3 + labels[i]];
    CHECK(ce.val()[i] == doctest::Approx(expect).epsilon(1e-12));
  }
  fd_check([&](std::vector<Var>& v) {
    return sum_all(nn::cross_entropy_per_sample(v[0], labels));
  }, {z});
}
