#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ndfsr/gradcheck.hpp"
#include "ndfsr/graph.hpp"
#include "test_util.hpp"

using namespace ndfsr;
using test::make_weights;
using test::random_tensor;
using test::reduce_weighted;

TEST_CASE("primitive forward examples") {
  Graph g;
  Tensor x = Tensor::leaf({1}, {0.0});
  CHECK(g.sigmoid(x).value() == doctest::Approx(0.5));

  Tensor logits = Tensor::leaf({2}, {0.0, 0.0});
  Tensor sm = g.softmax_last(logits);
  CHECK(sm.values()[0] == doctest::Approx(0.5));
  CHECK(sm.values()[1] == doctest::Approx(0.5));

  Tensor a = Tensor::leaf({2, 2}, {1, 2, 3, 4});
  Tensor id = Tensor::leaf({2, 2}, {1, 0, 0, 1});
  Tensor prod = g.matmul(a, id);
  for (std::size_t i = 0; i < 4; ++i) CHECK(prod.values()[i] == a.values()[i]);
}

TEST_CASE("shape mismatch reports both shapes") {
  Graph g;
  Tensor a = Tensor::leaf({2, 3}, std::vector<double>(6, 1.0));
  Tensor b = Tensor::leaf({2, 2}, std::vector<double>(4, 1.0));
  CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("(2,3)"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(g.add(a, b), doctest::Contains("(2,2)"), std::invalid_argument);
}

TEST_CASE("backward sigmoid at zero") {
  Tensor x = Tensor::leaf({1}, {0.0}, true);
  Graph g;
  Tensor y = g.sigmoid(x);
  x.zero_grad();
  g.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(0.25));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::leaf({2}, {0.0, 1.0}, true);
  Graph g;
  Tensor y = g.sigmoid(x);
  CHECK_THROWS_AS(g.backward(y), std::invalid_argument);
}

TEST_CASE("cross-entropy gradient equals softmax minus one-hot") {
  Rng rng(7);
  Tensor c = random_tensor({5}, rng);
  std::size_t k = 2;
  Graph g;
  Tensor sm = g.softmax_last(c);
  Tensor pk = g.gather_per_row(g.reshape(sm, {1, 5}), {k});
  Tensor loss = g.mean_axis(g.scalar_mul(g.log(pk), -1.0), 0);
  c.zero_grad();
  g.backward(loss);
  for (std::size_t j = 0; j < 5; ++j) {
    double expect = sm.values()[j] - (j == k ? 1.0 : 0.0);
    CHECK(c.grad()[j] == doctest::Approx(expect).epsilon(1e-9));
  }
  // and against central differences
  auto fwd = [&](Graph& gg) {
    Tensor s2 = gg.softmax_last(c);
    Tensor p2 = gg.gather_per_row(gg.reshape(s2, {1, 5}), {k});
    return gg.mean_axis(gg.scalar_mul(gg.log(p2), -1.0), 0);
  };
  CHECK(gradient_check_max_err(fwd, {c}) < 1e-6);
}

TEST_CASE("identity matmul passes gradient through unchanged") {
  Tensor id = Tensor::leaf({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor x = Tensor::leaf({3}, {0.3, -0.5, 0.9}, true);
  Graph g;
  Tensor y = g.matmul(id, x);
  Tensor loss = g.scalar_mul(g.mean_axis(y, 0), 3.0);  // sum
  x.zero_grad();
  g.backward(loss);
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(1.0));
}

TEST_CASE("softmax output sums to one and lies in [0,1]") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 7}, rng, false, -30.0, 30.0);
    Graph g;
    Tensor y = g.softmax_last(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        double v = y.values()[r * 7 + j];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("masked-fill entries get exactly zero probability") {
  Rng rng(13);
  Tensor x = random_tensor({2, 6}, rng, true);
  std::vector<std::uint8_t> mask(12, 0);
  mask[1] = mask[4] = mask[7] = 1;
  Graph g;
  Tensor y = g.softmax_last(g.masked_fill(x, mask));
  CHECK(y.values()[1] == 0.0);
  CHECK(y.values()[4] == 0.0);
  CHECK(y.values()[7] == 0.0);
  for (std::size_t r = 0; r < 2; ++r) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 6; ++j) sum += y.values()[r * 6 + j];
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax with every entry masked is rejected") {
  Tensor x = Tensor::leaf({1, 3}, {1.0, 2.0, 3.0});
  Graph g;
  CHECK_THROWS_AS(g.softmax_last(g.masked_fill(x, {1, 1, 1})), std::domain_error);
}

TEST_CASE("backward is deterministic bit for bit") {
  Rng rng(17);
  Tensor a = random_tensor({4, 3}, rng);
  Tensor b = random_tensor({3, 5}, rng);
  auto run = [&]() {
    a.zero_grad();
    b.zero_grad();
    Graph g;
    Tensor y = g.softmax_last(g.sigmoid(g.matmul(a, b)));
    Tensor w = Tensor::leaf({4, 5}, std::vector<double>(20, 0.37));
    Tensor loss = g.mean_axis(g.mean_axis(g.mul(y, w), 1), 0);
    g.backward(loss);
    auto ga = a.grad();
    auto gb = b.grad();
    ga.insert(ga.end(), gb.begin(), gb.end());
    return ga;
  };
  auto g1 = run();
  auto g2 = run();
  REQUIRE(g1.size() == g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("gradients accumulate additively across uses") {
  Tensor x = Tensor::leaf({1}, {0.7}, true);
  Graph g;
  Tensor y = g.add(x, x);
  x.zero_grad();
  g.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  // a second backward without zeroing keeps accumulating
  Graph g2;
  Tensor y2 = g2.scalar_mul(x, 3.0);
  g2.backward(y2);
  CHECK(x.grad()[0] == doctest::Approx(5.0));
}

TEST_CASE("constant function has exactly zero gradient") {
  Tensor x = Tensor::leaf({3}, {0.1, 0.2, 0.3}, true);
  Tensor c = Tensor::leaf({1}, {2.5});
  Graph g;
  Tensor loss = g.scalar_mul(c, 2.0);
  x.zero_grad();
  g.backward(loss);
  for (double v : x.grad()) CHECK(v == 0.0);
}

TEST_CASE("single random 3x3 matmul passes a tight gradient check") {
  Rng rng(23);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor b = random_tensor({3, 3}, rng);
  Tensor w = make_weights(Tensor::zeros({3, 3}), rng);
  auto fwd = [&](Graph& g) { return reduce_weighted(g, g.matmul(a, b), w); };
  CHECK(gradient_check_max_err(fwd, {a, b}) < 1e-6);
}

TEST_CASE("every primitive passes finite-difference checks over random seeds") {
  // ~100 seeds spread across the primitive set
  for (std::uint64_t seed = 1; seed <= 9; ++seed) {
    Rng rng(seed * 1009);
    CAPTURE(seed);

    {  // matmul matrix*matrix, matrix*vector, vector*matrix
      Tensor a = random_tensor({3, 4}, rng);
      Tensor b = random_tensor({4, 2}, rng);
      Tensor v = random_tensor({4}, rng);
      Tensor u = random_tensor({3}, rng);
      Tensor w1 = make_weights(Tensor::zeros({3, 2}), rng);
      Tensor w2 = make_weights(Tensor::zeros({3}), rng);
      Tensor w3 = make_weights(Tensor::zeros({4}), rng);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.matmul(a, b), w1); }, {a, b}) < 1e-4);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.matmul(a, v), w2); }, {a, v}) < 1e-4);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.matmul(u, a), w3); }, {u, a}) < 1e-4);
    }
    {  // add, mul, scalar-mul, rowvec variants
      Tensor a = random_tensor({3, 5}, rng);
      Tensor b = random_tensor({3, 5}, rng);
      Tensor v = random_tensor({5}, rng);
      Tensor w = make_weights(Tensor::zeros({3, 5}), rng);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.add(a, b), w); }, {a, b}) < 1e-4);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.mul(a, b), w); }, {a, b}) < 1e-4);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.scalar_mul(a, -1.7), w); }, {a}) < 1e-4);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.add_rowvec(a, v), w); }, {a, v}) < 1e-4);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.mul_rowvec(a, v), w); }, {a, v}) < 1e-4);
    }
    {  // sigmoid, log (positive inputs), softmax
      Tensor a = random_tensor({2, 6}, rng);
      Tensor p = random_tensor({2, 6}, rng, true, 0.2, 2.0);
      Tensor w = make_weights(Tensor::zeros({2, 6}), rng);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.sigmoid(a), w); }, {a}) < 1e-4);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.log(p), w); }, {p}) < 1e-4);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.softmax_last(a), w); }, {a}) < 1e-4);
    }
    {  // mean over both axes, transpose, reshape, concat both axes
      Tensor a = random_tensor({4, 3}, rng);
      Tensor b = random_tensor({4, 3}, rng);
      Tensor w0 = make_weights(Tensor::zeros({3}), rng);
      Tensor w1 = make_weights(Tensor::zeros({4}), rng);
      Tensor wt = make_weights(Tensor::zeros({3, 4}), rng);
      Tensor wr = make_weights(Tensor::zeros({12}), rng);
      Tensor wc0 = make_weights(Tensor::zeros({8, 3}), rng);
      Tensor wc1 = make_weights(Tensor::zeros({4, 6}), rng);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.mean_axis(a, 0), w0); }, {a}) < 1e-4);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.mean_axis(a, 1), w1); }, {a}) < 1e-4);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.transpose(a), wt); }, {a}) < 1e-4);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.reshape(a, {12}), wr); }, {a}) < 1e-4);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.concat(a, b, 0), wc0); }, {a, b}) < 1e-4);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.concat(a, b, 1), wc1); }, {a, b}) < 1e-4);
    }
    {  // gathers (duplicate rows exercise scatter-add), stack
      Tensor emb = random_tensor({6, 3}, rng);
      Tensor m = random_tensor({3, 5}, rng);
      Tensor r1 = random_tensor({4}, rng);
      Tensor r2 = random_tensor({4}, rng);
      Tensor wg = make_weights(Tensor::zeros({5, 3}), rng);
      Tensor wp = make_weights(Tensor::zeros({3}), rng);
      Tensor ws = make_weights(Tensor::zeros({2, 4}), rng);
      std::vector<std::size_t> rows = {2, 0, 2, 5, 1};
      std::vector<std::size_t> cols = {4, 0, 2};
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.gather_rows(emb, rows), wg); },
                {emb}) < 1e-4);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.gather_per_row(m, cols), wp); },
                {m}) < 1e-4);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.stack_rows({r1, r2}), ws); },
                {r1, r2}) < 1e-4);
    }
    {  // masked-fill + softmax
      Tensor a = random_tensor({2, 5}, rng);
      Tensor w = make_weights(Tensor::zeros({2, 5}), rng);
      std::vector<std::uint8_t> mask(10, 0);
      mask[3] = mask[6] = 1;
      CHECK(gradient_check_max_err(
                [&](Graph& g) {
                  return reduce_weighted(g, g.softmax_last(g.masked_fill(a, mask)), w);
                },
                {a}) < 1e-4);
    }
    {  // rsqrt-guard away from the guard, js-factor away from zero norm
      Tensor v = random_tensor({6}, rng, true, 0.5, 3.0);
      Tensor w = make_weights(Tensor::zeros({6}), rng);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.rsqrt_guard(v, 1e-12), w); },
                {v}) < 1e-4);
      Tensor ssq = random_tensor({6}, rng, true, 2.0, 9.0);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.js_factor(ssq, 3.0, false), w); },
                {ssq}) < 1e-4);
      CHECK(gradient_check_max_err(
                [&](Graph& g) { return reduce_weighted(g, g.js_factor(ssq, 3.0, true), w); },
                {ssq}) < 1e-4);
    }
    {  // tree-route at several depths
      for (std::size_t depth : {1, 2, 3}) {
        std::size_t splits = (std::size_t{1} << depth) - 1;
        Tensor s = random_tensor({3, splits}, rng, true, 0.05, 0.95);
        Tensor w = make_weights(Tensor::zeros({3, splits + 1}), rng);
        CHECK(gradient_check_max_err(
                  [&](Graph& g) { return reduce_weighted(g, g.tree_route(s, depth), w); },
                  {s}) < 1e-4);
      }
    }
  }
}

TEST_CASE("non-finite intermediates are reported with the primitive name") {
  Tensor x = Tensor::leaf({2}, {-1.0, -2.0}, true);
  auto fwd = [&](Graph& g) { return g.mean_axis(g.log(x), 0); };  // log of negatives
  CHECK_THROWS_WITH_AS(gradient_check(fwd, {x}), doctest::Contains("log"), std::runtime_error);
}
