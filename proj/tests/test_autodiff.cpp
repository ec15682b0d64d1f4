// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "timbre/gradcheck.hpp"
#include "timbre/graph.hpp"

using namespace timbre;

namespace {

template <typename T>
typename Graph<T>::Id sum_all(Graph<T>& g, typename Graph<T>::Id x) {
  return g.weighted_sum(x, Tensor<T>::full({g.val(x).numel()}, T(1)));
}

}  // namespace

TEST_CASE("finite differences agree with the tape") {
  auto results = run_all_grad_checks();
  REQUIRE(results.size() >= 19);
  for (const auto& r : results) {
    INFO(r.name << ": max_abs=" << r.max_abs_diff << " max_rel=" << r.max_rel_diff);
    CHECK(r.pass);
  }
}

TEST_CASE("graph mechanics") {
  SECTION("backward requires a scalar loss") {
    Graph<double> g;
    auto x = g.value(Tensor<double>::zeros({3}), true);
    REQUIRE_THROWS_AS(g.backward(x), TrainError);
  }

  SECTION("gradients appear only where requested") {
    Graph<double> g;
    Tensor<double> v({2}, {1.0, 2.0});
    auto a = g.value(v, true);
    auto b = g.value(v, false);
    auto s = g.add(a, b);
    g.backward(sum_all(g, s));
    REQUIRE(g.has_grad(a));
    REQUIRE_FALSE(g.has_grad(b));
    REQUIRE(g.grad(a)[0] == 1.0);
    REQUIRE(g.grad(a)[1] == 1.0);
  }

  SECTION("needs_grad propagates through results") {
    Graph<double> g;
    auto a = g.value(Tensor<double>::zeros({2}), false);
    auto r = g.relu(a);
    REQUIRE_FALSE(g.needs_grad(r));
    auto b = g.value(Tensor<double>::zeros({2}), true);
    REQUIRE(g.needs_grad(g.add(a, b)));
  }

  SECTION("shape mismatches throw") {
    Graph<double> g;
    auto a = g.value(Tensor<double>::zeros({2}), true);
    auto b = g.value(Tensor<double>::zeros({3}), true);
    REQUIRE_THROWS_AS(g.add(a, b), TrainError);
  }

  SECTION("gradients accumulate across fan-out") {
    Graph<double> g;
    auto x = g.value(Tensor<double>::scalar(3.0), true);
    auto y = g.add(x, x);  // dy/dx = 2
    g.backward(sum_all(g, y));
    REQUIRE(g.grad(x)[0] == 2.0);
  }

  SECTION("a second independent tape matches the first") {
    Tensor<double> v = Tensor<double>::scalar(2.0);
    Graph<double> g1;
    auto x1 = g1.value(v, true);
    g1.backward(sum_all(g1, g1.relu(x1)));
    Graph<double> g2;
    auto x2 = g2.value(v, true);
    g2.backward(sum_all(g2, g2.relu(x2)));
    REQUIRE(g1.grad(x1)[0] == g2.grad(x2)[0]);
  }
}
