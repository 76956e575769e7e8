#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ndfsr/gradcheck.hpp"
#include "ndfsr/model.hpp"
#include "test_util.hpp"

using namespace ndfsr;

TEST_CASE("single-item session: attention mean is that item's embedding") {
  // with one item, softmax over one score is 1 regardless of parameters,
  // so z = proj^T [e; e]
  Rng rng(5);
  ReferenceEncoder enc(4, 3, 2, rng);
  Session s{{2}, 0};
  Graph g;
  Tensor z = enc.encode(g, s);
  const auto& a = enc.embedding().values();
  std::vector<double> cat = {a[2 * 3], a[2 * 3 + 1], a[2 * 3 + 2],
                             a[2 * 3], a[2 * 3 + 1], a[2 * 3 + 2]};
  const auto& p = enc.proj().values();  // (6, 2)
  for (std::size_t j = 0; j < 2; ++j) {
    double expect = 0.0;
    for (std::size_t i = 0; i < 6; ++i) expect += cat[i] * p[i * 2 + j];
    CHECK(z.values()[j] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("uniform attention over two items averages their embeddings") {
  Rng rng(6);
  ReferenceEncoder enc(2, 2, 2, rng);
  // force embeddings [1,0] and [0,1]; zero attention vector = uniform weights
  enc.embedding().values() = {1.0, 0.0, 0.0, 1.0};
  enc.attn().values() = {0.0, 0.0};
  Session s{{0, 1}, 0};
  Graph g;
  Tensor emb = g.gather_rows(enc.embedding(), s.items);
  Tensor alpha = g.softmax_last(g.matmul(emb, enc.attn()));
  Tensor mean = g.matmul(alpha, emb);
  CHECK(mean.values()[0] == doctest::Approx(0.5));
  CHECK(mean.values()[1] == doctest::Approx(0.5));
}

TEST_CASE("permuting non-last items under uniform attention keeps the mean") {
  Rng rng(7);
  ReferenceEncoder enc(6, 4, 3, rng);
  enc.attn().values().assign(4, 0.0);  // uniform attention
  Session s1{{0, 1, 2, 3}, 0};
  Session s2{{2, 0, 1, 3}, 0};
  Graph g1, g2;
  Tensor z1 = enc.encode(g1, s1);
  Tensor z2 = enc.encode(g2, s2);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(z1.values()[i] == doctest::Approx(z2.values()[i]).epsilon(1e-12));
}

TEST_CASE("empty session rejected") {
  Rng rng(8);
  ReferenceEncoder enc(4, 3, 2, rng);
  Graph g;
  CHECK_THROWS_AS(enc.encode(g, Session{{}, 0}), std::invalid_argument);
  CHECK_THROWS_AS(enc.encode(g, Session{{9}, 0}), std::invalid_argument);
}

TEST_CASE("predict-linear on the identity embedding") {
  Rng rng(9);
  // A = I2, linear = I2, z = [1, 0] -> s_h = [1,0], c = [1,0]
  ReferenceEncoder enc(2, 2, 2, rng);
  enc.embedding().values() = {1.0, 0.0, 0.0, 1.0};
  LinearPredictor pred(2, 2, enc.embedding(), rng);
  pred.linear().values() = {1.0, 0.0, 0.0, 1.0};
  Graph g;
  Tensor z = Tensor::leaf({1, 2}, {1.0, 0.0});
  Tensor y = pred.predict(g, z);
  CHECK(y.values()[0] == doctest::Approx(0.7310585786));
  CHECK(y.values()[1] == doctest::Approx(0.2689414214));
}

TEST_CASE("equal scores give the uniform distribution") {
  Rng rng(10);
  ReferenceEncoder enc(3, 2, 2, rng);
  enc.embedding().values() = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5};  // all rows equal -> equal scores
  LinearPredictor pred(2, 2, enc.embedding(), rng);
  Graph g;
  Tensor z = Tensor::leaf({1, 2}, {0.3, -0.8});
  Tensor y = pred.predict(g, z);
  for (std::size_t j = 0; j < 3; ++j) CHECK(y.values()[j] == doctest::Approx(1.0 / 3));
}

TEST_CASE("softmax shift invariance of the score vector") {
  Graph g;
  Tensor c1 = Tensor::leaf({1, 4}, {0.2, -1.0, 0.7, 0.0});
  Tensor c2 = Tensor::leaf({1, 4}, {0.2 + 5, -1.0 + 5, 0.7 + 5, 0.0 + 5});
  Tensor y1 = g.softmax_last(c1);
  Tensor y2 = g.softmax_last(c2);
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(y1.values()[j] == doctest::Approx(y2.values()[j]).epsilon(1e-12));
}

TEST_CASE("prediction is a simplex vector and argmax matches the scores") {
  Rng rng(11);
  ReferenceEncoder enc(8, 4, 3, rng);
  LinearPredictor pred(3, 4, enc.embedding(), rng);
  for (int t = 0; t < 20; ++t) {
    Graph g;
    Tensor z = test::random_tensor({2, 3}, rng, false, -2.0, 2.0);
    Tensor c = pred.scores(g, z);
    Tensor y = g.softmax_last(c);
    for (std::size_t r = 0; r < 2; ++r) {
      double sum = 0.0;
      std::size_t amax_c = 0, amax_y = 0;
      for (std::size_t j = 0; j < 8; ++j) {
        double cv = c.values()[r * 8 + j], yv = y.values()[r * 8 + j];
        CHECK(yv >= 0.0);
        sum += yv;
        if (cv > c.values()[r * 8 + amax_c]) amax_c = j;
        if (yv > y.values()[r * 8 + amax_y]) amax_y = j;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
      CHECK(amax_c == amax_y);
    }
  }
}

TEST_CASE("encode then predict-linear passes the gradient check") {
  Rng rng(12);
  ReferenceEncoder enc(6, 3, 4, rng);
  LinearPredictor pred(4, 3, enc.embedding(), rng);
  std::vector<Session> batch = {{{0, 2, 4}, 1}, {{5, 5}, 3}, {{1}, 0}};
  std::vector<std::size_t> targets = {1, 3, 0};
  auto fwd = [&](Graph& g) {
    Tensor z = enc.encode_batch(g, batch);
    Tensor y = pred.predict(g, z);
    Tensor pk = g.gather_per_row(y, targets);
    return g.mean_axis(g.scalar_mul(g.log(pk), -1.0), 0);
  };
  std::vector<Tensor> leaves = {enc.embedding(), enc.attn(), enc.proj(), pred.linear()};
  CHECK(gradient_check_max_err(fwd, leaves) < 1e-4);
}
