#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fslab/tensor.hpp"

using namespace fslab;

namespace {

TensorPtr random_tensor(Shape shape, Rng& rng, bool requires_grad = false, double lo = -1.0,
                        double hi = 1.0) {
  std::vector<double> data(static_cast<size_t>(numel(shape)));
  for (auto& v : data) v = rng.uniform(lo, hi);
  return Tensor::make(std::move(shape), std::move(data), requires_grad);
}

// Scalarizes an arbitrary-shaped op output with fixed random weights so the
// finite-difference check sees a non-trivial gradient in every coordinate.
TensorPtr weighted_sum(const TensorPtr& y, uint64_t seed) {
  Rng rng(seed);
  auto w = random_tensor(y->shape, rng, false, 0.2, 1.0);
  return sum(mul(y, w));
}

}  // namespace

TEST_CASE("matmul forward examples") {
  auto eye = Tensor::make({2, 2}, {1, 0, 0, 1});
  auto m = Tensor::make({2, 2}, {1, 2, 3, 4});
  auto prod = matmul(eye, m);
  CHECK(prod->data == std::vector<double>{1, 2, 3, 4});

  auto a = Tensor::make({1, 2}, {1, 2});
  auto b = Tensor::make({2, 1}, {3, 4});
  CHECK(matmul(a, b)->data[0] == doctest::Approx(11.0).epsilon(1e-12));
}

TEST_CASE("matmul shape error names both shapes") {
  auto a = Tensor::make({2, 3}, std::vector<double>(6, 0.0));
  auto b = Tensor::make({4, 5}, std::vector<double>(20, 0.0));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient of sum(A*B) wrt A at B=I is ones") {
  auto b = Tensor::make({2, 2}, {1, 0, 0, 1});
  auto a0 = Tensor::make({2, 2}, {1, 1, 1, 1});
  auto rep = finite_diff_check([&](const TensorPtr& a) { return sum(matmul(a, b)); }, a0, 1e-5,
                               1e-4);
  CHECK(rep.pass);

  auto a = Tensor::make({2, 2}, {1, 1, 1, 1}, true);
  backward(sum(matmul(a, b)));
  for (double g : a->grad) CHECK(g == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax examples") {
  auto y = softmax(Tensor::make({2}, {0, 0}));
  CHECK(y->data[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y->data[1] == doctest::Approx(0.5).epsilon(1e-12));

  auto z = softmax(Tensor::make({2}, {std::log(3.0), 0.0}));
  CHECK(z->data[0] == doctest::Approx(0.75).epsilon(1e-9));
  CHECK(z->data[1] == doctest::Approx(0.25).epsilon(1e-9));

  auto big = softmax(Tensor::make({2}, {1000.0, 0.0}));
  CHECK(std::isfinite(big->data[0]));
  CHECK(big->data[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(big->data[1] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("softmax rejects NaN input") {
  auto x = Tensor::make({2}, {std::nan(""), 0.0});
  CHECK_THROWS_AS(softmax(x), NumericError);
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto x = random_tensor({4, 7}, rng, false, -3.0, 3.0);
    auto y = softmax(x, -1);
    for (int r = 0; r < 4; ++r) {
      double s = 0.0;
      for (int c = 0; c < 7; ++c) s += y->data[r * 7 + c];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
    const double c = rng.uniform(-10.0, 10.0);
    auto shifted = x->data;
    for (auto& v : shifted) v += c;
    auto y2 = softmax(Tensor::make(x->shape, shifted), -1);
    for (size_t i = 0; i < y->data.size(); ++i) {
      CHECK(y2->data[i] == doctest::Approx(y->data[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("layer_norm examples") {
  auto gain = Tensor::make({2}, {1, 1});
  auto bias = Tensor::make({2}, {0, 0});

  auto flat = layer_norm(Tensor::make({2}, {5, 5}), gain, bias);
  CHECK(flat->data[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(flat->data[1] == doctest::Approx(0.0).epsilon(1e-9));

  auto y = layer_norm(Tensor::make({2}, {1, 3}), gain, bias);
  CHECK(y->data[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y->data[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("l2_normalize examples") {
  auto a = l2_normalize(Tensor::make({3}, {1, 0, 0}));
  CHECK(a->data == std::vector<double>{1, 0, 0});

  auto b = l2_normalize(Tensor::make({2}, {3, 4}));
  CHECK(b->data[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(b->data[1] == doctest::Approx(0.8).epsilon(1e-12));

  CHECK_THROWS_AS(l2_normalize(Tensor::make({2}, {0, 0})), DegenerateVectorError);
}

TEST_CASE("l2_normalize is idempotent") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto x = random_tensor({6}, rng, false, -2.0, 2.0);
    auto once = l2_normalize(x);
    auto twice = l2_normalize(once);
    for (size_t i = 0; i < once->data.size(); ++i) {
      CHECK(std::fabs(once->data[i] - twice->data[i]) < 1e-12);
    }
  }
}

TEST_CASE("backward basics") {
  auto x = Tensor::make({3}, {1, 2, 3}, true);
  backward(sum(x));
  REQUIRE(x->has_grad());
  CHECK(x->grad == std::vector<double>{1, 1, 1});

  auto v = Tensor::make({1}, {3}, true);
  backward(sum(mul(v, v)));
  CHECK(v->grad[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("frozen leaf receives no gradient") {
  auto frozen = Tensor::make({2}, {1, 2}, false);
  auto live = Tensor::make({2}, {3, 4}, true);
  backward(sum(mul(frozen, live)));
  CHECK(!frozen->has_grad());
  CHECK(live->has_grad());
}

TEST_CASE("double backward on the same loss throws") {
  auto x = Tensor::make({2}, {1, 2}, true);
  auto loss = sum(mul(x, x));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), DoubleBackwardError);
}

TEST_CASE("backward requires scalar loss reachable from trainable leaves") {
  auto x = Tensor::make({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(mul(x, x)), AutodiffError);
  auto frozen = Tensor::make({2}, {1, 2}, false);
  CHECK_THROWS_AS(backward(sum(mul(frozen, frozen))), AutodiffError);
}

TEST_CASE("gradients accumulate until zero_grads") {
  auto x = Tensor::make({1}, {2}, true);
  backward(sum(mul(x, x)));
  backward(sum(mul(x, x)));
  CHECK(x->grad[0] == doctest::Approx(8.0).epsilon(1e-12));  // 2 * (2x)
  zero_grads({x});
  CHECK(!x->has_grad());
}

// Brute-force per-path chain rule on graphs of <= 6 nodes: sum over all
// leaf-to-root paths of the product of local partials, written out by hand.
TEST_CASE("shared subexpressions accumulate like the path oracle") {
  SUBCASE("L = (x+x)*x") {
    const double xv = 1.5;
    auto x = Tensor::scalar(xv, true);
    auto u = add(x, x);
    backward(mul(u, x));
    // paths: L->u->x (1 * x), L->u->x (1 * x), L->x (u = 2x). total 4x.
    CHECK(x->grad[0] == doctest::Approx(4.0 * xv).epsilon(1e-12));
  }
  SUBCASE("L = s*s with s = x*x") {
    const double xv = 2.0;
    auto x = Tensor::scalar(xv, true);
    auto s = mul(x, x);
    backward(mul(s, s));
    // four paths, each s * x: 4 * x^3
    CHECK(x->grad[0] == doctest::Approx(4.0 * xv * xv * xv).epsilon(1e-12));
  }
  SUBCASE("L = (x*y)*(x+y)") {
    const double xv = 2.0, yv = 3.0;
    auto x = Tensor::scalar(xv, true);
    auto y = Tensor::scalar(yv, true);
    auto p = mul(x, y);
    auto q = add(x, y);
    backward(mul(p, q));
    // dL/dx: L->p->x (q * y) plus L->q->x (p * 1)
    CHECK(x->grad[0] == doctest::Approx((xv + yv) * yv + xv * yv).epsilon(1e-12));
    CHECK(y->grad[0] == doctest::Approx((xv + yv) * xv + xv * yv).epsilon(1e-12));
  }
}

TEST_CASE("graph trace is ordered by construction") {
  auto x = Tensor::scalar(1.0, true);
  auto a = mul(x, x);
  auto b = add(a, x);
  auto loss = mul(b, a);
  auto g = Graph::trace(loss);
  for (size_t i = 1; i < g.nodes.size(); ++i) CHECK(g.nodes[i - 1]->id < g.nodes[i]->id);
  CHECK(g.nodes.back() == loss.get());
}

TEST_CASE("finite_diff_check examples") {
  Rng rng(0);
  auto x = random_tensor({5}, rng);
  auto rep = finite_diff_check([](const TensorPtr& t) { return sum(mul(t, t)); }, x);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err <= 1e-4);

  auto constant = finite_diff_check([](const TensorPtr&) { return Tensor::scalar(3.0); }, x);
  CHECK(constant.pass);
  CHECK(constant.max_rel_err == 0.0);

  CHECK_THROWS_AS(finite_diff_check([](const TensorPtr& t) { return sum(t); }, x, 1.0),
                  ConfigError);
}

TEST_CASE("analytic gradients match finite differences for every op, 5 seeds") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);

    SUBCASE("") {}  // keep doctest quiet about empty bodies

    {
      auto a = random_tensor({3, 4}, rng);
      auto b = random_tensor({4, 2}, rng);
      CHECK(finite_diff_check(
                [&](const TensorPtr& t) { return weighted_sum(matmul(t, b), seed); }, a)
                .pass);
      CHECK(finite_diff_check(
                [&](const TensorPtr& t) { return weighted_sum(matmul(a, t), seed); }, b)
                .pass);
    }
    {
      auto x = random_tensor({3, 4}, rng);
      auto w = random_tensor({5, 4}, rng);
      auto bias = random_tensor({5}, rng);
      CHECK(finite_diff_check(
                [&](const TensorPtr& t) { return weighted_sum(linear(t, w, bias), seed); }, x)
                .pass);
      CHECK(finite_diff_check(
                [&](const TensorPtr& t) { return weighted_sum(linear(x, t, bias), seed); }, w)
                .pass);
      CHECK(finite_diff_check(
                [&](const TensorPtr& t) { return weighted_sum(linear(x, w, t), seed); }, bias)
                .pass);
      auto xv = random_tensor({4}, rng);
      CHECK(finite_diff_check(
                [&](const TensorPtr& t) { return weighted_sum(linear(t, w, nullptr), seed); }, xv)
                .pass);
    }
    {
      auto x = random_tensor({3, 5}, rng);
      CHECK(finite_diff_check(
                [&](const TensorPtr& t) { return weighted_sum(transpose(t), seed); }, x)
                .pass);
      CHECK(finite_diff_check(
                [&](const TensorPtr& t) { return weighted_sum(softmax(t, -1), seed); }, x)
                .pass);
      CHECK(finite_diff_check(
                [&](const TensorPtr& t) { return weighted_sum(softmax(t, 0), seed); }, x)
                .pass);
    }
    {
      auto x = random_tensor({2, 6}, rng);
      auto gain = random_tensor({6}, rng, false, 0.5, 1.5);
      auto bias = random_tensor({6}, rng);
      CHECK(finite_diff_check(
                [&](const TensorPtr& t) { return weighted_sum(layer_norm(t, gain, bias), seed); },
                x)
                .pass);
      CHECK(finite_diff_check(
                [&](const TensorPtr& t) { return weighted_sum(layer_norm(x, t, bias), seed); },
                gain)
                .pass);
      CHECK(finite_diff_check(
                [&](const TensorPtr& t) { return weighted_sum(layer_norm(x, gain, t), seed); },
                bias)
                .pass);
    }
    {
      auto x = random_tensor({7}, rng, false, -2.0, 2.0);
      CHECK(finite_diff_check([&](const TensorPtr& t) { return weighted_sum(gelu(t), seed); }, x)
                .pass);
      // keep relu inputs away from the kink
      auto far = x->data;
      for (auto& v : far) v = v < 0 ? v - 0.1 : v + 0.1;
      CHECK(finite_diff_check([&](const TensorPtr& t) { return weighted_sum(relu(t), seed); },
                              Tensor::make({7}, far))
                .pass);
      CHECK(finite_diff_check(
                [&](const TensorPtr& t) { return weighted_sum(l2_normalize(t), seed); }, x)
                .pass);
    }
    {
      auto a = random_tensor({3, 3}, rng);
      auto b = random_tensor({3, 3}, rng);
      CHECK(finite_diff_check([&](const TensorPtr& t) { return weighted_sum(add(t, b), seed); }, a)
                .pass);
      CHECK(finite_diff_check([&](const TensorPtr& t) { return weighted_sum(sub(t, b), seed); }, a)
                .pass);
      CHECK(finite_diff_check([&](const TensorPtr& t) { return weighted_sum(mul(t, b), seed); }, a)
                .pass);
      CHECK(finite_diff_check(
                [&](const TensorPtr& t) { return weighted_sum(scale(t, -1.7), seed); }, a)
                .pass);
      CHECK(finite_diff_check([&](const TensorPtr& t) { return sum(t); }, a).pass);
      CHECK(finite_diff_check([&](const TensorPtr& t) { return mean(t); }, a).pass);
    }
    {
      auto x = random_tensor({4, 6}, rng);
      CHECK(finite_diff_check([&](const TensorPtr& t) { return weighted_sum(row(t, 2), seed); }, x)
                .pass);
      CHECK(finite_diff_check(
                [&](const TensorPtr& t) { return weighted_sum(slice_cols(t, 1, 3), seed); }, x)
                .pass);
      auto v = random_tensor({6}, rng);
      CHECK(finite_diff_check(
                [&](const TensorPtr& t) { return weighted_sum(concat_rows({v, t, v}), seed); }, x)
                .pass);
    }
    {
      auto x = random_tensor({8}, rng);
      CHECK(finite_diff_check(
                [&, seed](const TensorPtr& t) {
                  Rng mask_rng(seed + 100);
                  return weighted_sum(dropout(t, 0.4, mask_rng, true), seed);
                },
                x)
                .pass);
    }
  }
}

TEST_CASE("structural op edge cases") {
  auto x = Tensor::make({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(row(x, 5), ShapeError);
  CHECK_THROWS_AS(slice_cols(x, 2, 4), ShapeError);
  CHECK_THROWS_AS(concat_rows({}), ShapeError);

  auto v = Tensor::make({3}, {7, 8, 9});
  auto stacked = concat_rows({v, x});
  CHECK(stacked->shape == Shape{3, 3});
  CHECK(stacked->data[0] == 7);
  CHECK(stacked->data[3] == 1);

  Rng rng(0);
  CHECK_THROWS_AS(dropout(v, 1.0, rng, true), ConfigError);
  CHECK(dropout(v, 0.5, rng, false) == v);  // identity outside training
}

TEST_CASE("no-grad scope suppresses recording") {
  auto x = Tensor::make({2}, {1, 2}, true);
  NoGradScope guard;
  auto y = mul(x, x);
  CHECK(!y->requires_grad);
  CHECK(y->parents.empty());
}
