// Copyright (c) 2026, laddermoe contributors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "laddermoe/rng.hpp"
#include "laddermoe/tensor.hpp"

using namespace laddermoe;
using Catch::Matchers::WithinAbs;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = true, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), grad);
  for (double& v : t.data()) v = rng.normal() * scale;
  return t;
}

}  // namespace

TEST_CASE("matmul matches identity, annihilator and a triple-loop oracle", "[tensor]") {
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(eye, m).values() == m.values());

  Rng rng(3);
  const Tensor any = random_tensor({3, 4}, rng, false);
  const Tensor z = matmul(Tensor::zeros({2, 3}), any);
  CHECK(z.shape() == Shape{2, 4});
  for (double v : z.data()) CHECK(v == 0.0);

  const Tensor a = random_tensor({3, 4}, rng, false), b = random_tensor({4, 2}, rng, false);
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
      CHECK_THAT(c.at(i, j), WithinAbs(s, 1e-12));
    }
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("softmax is a shift-invariant probability vector", "[tensor]") {
  const Tensor u = softmax(Tensor::from({3}, {0, 0, 0}), 0);
  for (double v : u.data()) CHECK_THAT(v, WithinAbs(1.0 / 3.0, 1e-15));

  const Tensor s = softmax(Tensor::from({3}, {1, 2, 3}), 0);
  const double z = std::exp(-2.0) + std::exp(-1.0) + 1.0;
  CHECK_THAT(s.data()[0], WithinAbs(std::exp(-2.0) / z, 1e-12));
  CHECK_THAT(s.data()[1], WithinAbs(std::exp(-1.0) / z, 1e-12));
  CHECK_THAT(s.data()[2], WithinAbs(1.0 / z, 1e-12));

  const Tensor shifted = softmax(Tensor::from({3}, {1 + 123.5, 2 + 123.5, 3 + 123.5}), 0);
  for (std::size_t i = 0; i < 3; ++i) CHECK_THAT(shifted.data()[i], WithinAbs(s.data()[i], 1e-12));

  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor v = random_tensor({4, 7}, rng, false, 30.0);
    for (std::size_t axis : {0u, 1u}) {
      const Tensor p = softmax(v, axis);
      const std::size_t outer = axis == 0 ? 7 : 4, len = axis == 0 ? 4 : 7;
      for (std::size_t o = 0; o < outer; ++o) {
        double total = 0;
        for (std::size_t k = 0; k < len; ++k) {
          const double x = axis == 0 ? p.at(k, o) : p.at(o, k);
          CHECK(x > 0.0);
          total += x;
        }
        CHECK_THAT(total, WithinAbs(1.0, 1e-12));
      }
    }
  }
  CHECK_THROWS_AS(softmax(Tensor::zeros({2, 0}), 1), DimensionError);
  CHECK_THROWS_AS(softmax(Tensor::zeros({2, 2}), 2), DimensionError);
}

TEST_CASE("layer_norm degenerate, fixed point and formula cases", "[tensor]") {
  const Tensor one = Tensor::from({2}, {1, 1}), zero = Tensor::from({2}, {0, 0});
  const Tensor c = layer_norm(Tensor::from({1, 2}, {5, 5}), one, zero, 1e-5);
  for (double v : c.data()) CHECK(v == 0.0);

  const Tensor unit = Tensor::from({1, 2}, {-1, 1});
  const Tensor f = layer_norm(unit, one, zero, 1e-12);
  CHECK_THAT(f.data()[0], WithinAbs(-1.0, 1e-6));
  CHECK_THAT(f.data()[1], WithinAbs(1.0, 1e-6));

  const Tensor r = layer_norm(Tensor::from({1, 2}, {1, 3}), one, zero, 1e-5);
  const double mean = 2.0, var = 1.0;
  CHECK_THAT(r.data()[0], WithinAbs((1 - mean) / std::sqrt(var + 1e-5), 1e-12));
  CHECK_THAT(r.data()[1], WithinAbs((3 - mean) / std::sqrt(var + 1e-5), 1e-12));

  CHECK_THROWS_AS(layer_norm(unit, one, zero, 0.0), ParameterError);
  CHECK_THROWS_AS(layer_norm(unit, Tensor::from({3}, {1, 1, 1}), zero, 1e-5), DimensionError);
}

TEST_CASE("backward: product rule, sum rule, fan-out", "[tensor]") {
  Tensor x = Tensor::scalar(3.0, true), y = Tensor::scalar(-2.0, true);
  backward(mul(x, y));
  CHECK(x.grad()[0] == -2.0);
  CHECK(y.grad()[0] == 3.0);

  Tensor v = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(sum(v));
  for (double g : v.grad()) CHECK(g == 1.0);

  // diamond: f = sum(a*a + sigmoid(a)), each path's gradient computed by hand
  Tensor a = Tensor::from({1, 3}, {0.5, -1.0, 2.0}, true);
  backward(sum(add(mul(a, a), sigmoid(a))));
  for (std::size_t i = 0; i < 3; ++i) {
    const double av = a.data()[i], s = 1.0 / (1.0 + std::exp(-av));
    CHECK_THAT(a.grad()[i], WithinAbs(2 * av + s * (1 - s), 1e-14));
  }

  // leaves without requires_grad receive nothing
  Tensor w = Tensor::from({1, 3}, {1, 2, 3}, false);
  Tensor b = Tensor::from({1, 3}, {1, 1, 1}, true);
  backward(sum(mul(w, b)));
  CHECK_FALSE(w.has_grad());
  CHECK(b.has_grad());

  Tensor out = mul(b, b);
  CHECK_THROWS_AS(backward(Graph::trace(out), Tensor::zeros({3})), DimensionError);
}

TEST_CASE("no-grad mode records nothing", "[tensor]") {
  Tensor a = Tensor::from({1, 2}, {1, 2}, true);
  NoGradGuard g;
  const Tensor r = mul(a, a);
  CHECK_FALSE(r.requires_grad());
  CHECK(r.is_leaf());
}

TEST_CASE("finite_difference_check trivial cases and errors", "[tensor][fd]") {
  Tensor x = Tensor::from({1, 3}, {0.3, -0.7, 1.1}, true);
  const auto lin = finite_difference_check([&] { return sum(scale(x, 2.5)); }, {{"x", x}}, 1e-4, 1e-10);
  CHECK(lin.all_passed());
  CHECK(lin.worst() < 1e-10);

  const auto zero = finite_difference_check([&] { return sum(scale(x, 0.0)); }, {{"x", x}}, 1e-4, 1e-10);
  CHECK(zero.all_passed());
  CHECK(zero.entries[0].analytic == 0.0);

  CHECK_THROWS_AS(finite_difference_check([&] { return sum(x); }, {{"x", x}}, 0.0, 1e-4), ParameterError);
  CHECK_THROWS_AS(finite_difference_check([&] { return sum(x); }, {{"x", x}}, 0.1, 1e-4), ParameterError);
  CHECK_THROWS_AS(finite_difference_check([&] { return scale(sum(x), std::nan("")); }, {{"x", x}}, 1e-4, 1e-4),
                  NumericError);
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK_THAT(relative_error(1.0, 1.1), WithinAbs(0.1 / 1.1, 1e-15));
}

TEST_CASE("two-layer composite matches central differences", "[tensor][fd]") {
  Rng rng(5);
  Tensor x = random_tensor({3, 4}, rng, false);
  Tensor w1 = random_tensor({4, 5}, rng, true, 0.5);
  Tensor w2 = random_tensor({5, 6}, rng, true, 0.5);
  auto f = [&] {
    Tensor h = softmax(matmul(x, w1), 1);
    return cross_entropy(matmul(h, w2), {1, 4, 0});
  };
  const auto rep = finite_difference_check(f, {{"w1", w1}, {"w2", w2}}, 1e-5, 1e-4);
  for (auto& e : rep.entries) INFO(e.name << " " << e.max_rel_error);
  CHECK(rep.all_passed());
}

TEST_CASE("every differentiable op agrees with central differences", "[tensor][fd]") {
  Rng rng(17);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), c = random_tensor({4, 2}, rng);
  Tensor s = random_tensor({1}, rng), bias = random_tensor({4}, rng);
  Tensor g = Tensor::from({4}, {1.1, 0.9, 1.2, 0.8}, true), be = random_tensor({4}, rng);
  Tensor r = random_tensor({2, 4}, rng);
  Tensor w = random_tensor({3, 2}, rng);  // projection to a scalar loss that does not cancel
  const std::vector<double> mask{0, -1, 0, 0, 2, 0, 0, 0, 0, 0, 0, -3};

  const std::vector<std::pair<std::string, std::function<Tensor()>>> ops = {
      {"matmul", [&] { return matmul(a, c); }},
      {"matmul_nt", [&] { return matmul_nt(a, b); }},
      {"transpose", [&] { return transpose(a); }},
      {"add", [&] { return add(a, b); }},
      {"sub", [&] { return sub(a, b); }},
      {"mul", [&] { return mul(a, b); }},
      {"scale", [&] { return scale(a, -1.7); }},
      {"mul_scalar", [&] { return mul_scalar(a, s); }},
      {"add_bias", [&] { return add_bias(a, bias); }},
      {"add_constant", [&] { return add_constant(a, mask); }},
      {"sigmoid", [&] { return sigmoid(a); }},
      {"gelu", [&] { return gelu(a); }},
      {"mean_rows", [&] { return mean_rows(a); }},
      {"softmax0", [&] { return softmax(a, 0); }},
      {"softmax1", [&] { return softmax(a, 1); }},
      {"layer_norm", [&] { return layer_norm(a, g, be, 1e-5); }},
      {"reshape", [&] { return reshape(a, {4, 3}); }},
      {"slice_rows", [&] { return slice_rows(a, 1, 3); }},
      {"slice_cols", [&] { return slice_cols(a, 1, 3); }},
      {"concat_rows", [&] { return concat_rows({a, r}); }},
      {"concat_cols", [&] { return concat_cols({a, b}); }},
      {"gather_rows", [&] { return gather_rows(a, {2, 0, 2}); }},
      {"gather_cols", [&] { return gather_cols(a, {3, 1}); }},
  };
  for (auto& [name, op] : ops) {
    // weight each output element differently so the loss is sensitive to all of them
    auto f = [&] {
      Tensor y = op();
      Tensor flat = reshape(y, {1, y.size()});
      std::vector<double> coeffs(y.size());
      for (std::size_t i = 0; i < coeffs.size(); ++i) coeffs[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
      return sum(mul(flat, Tensor::from({1, y.size()}, coeffs)));
    };
    const auto rep = finite_difference_check(
        f, {{"a", a}, {"b", b}, {"c", c}, {"s", s}, {"bias", bias}, {"g", g}, {"be", be}, {"r", r}}, 1e-6, 1e-4);
    for (auto& e : rep.entries) {
      INFO(name << " / " << e.name << " rel " << e.max_rel_error << " analytic " << e.analytic << " numeric " << e.numeric);
      CHECK(e.passed);
    }
  }
  (void)w;
}

TEST_CASE("cross_entropy matches the log-softmax formula and skips the ignore index", "[tensor]") {
  const Tensor logits = Tensor::from({2, 3}, {1, 2, 3, 0, 0, 0});
  const double l0 = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  CHECK_THAT(cross_entropy(logits, {2, -1}).item(), WithinAbs(l0, 1e-12));
  CHECK_THAT(cross_entropy(logits, {2, 0}).item(), WithinAbs((l0 + std::log(3.0)) / 2, 1e-12));
  CHECK_THROWS_AS(cross_entropy(logits, {5, 0}), DimensionError);
}
