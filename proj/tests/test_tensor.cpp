#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flowpos/errors.hpp"
#include "flowpos/rng.hpp"
#include "flowpos/tensor.hpp"

using namespace flowpos;

TEST_CASE("shape and value bookkeeping") {
  Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(1, 2) == 6.0);
  CHECK(t.shape_str() == "[2x3]");
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
}

TEST_CASE("grad buffer is optional until allocated") {
  Tensor t = Tensor::zeros({3});
  CHECK(t.grad.empty());
  t.ensure_grad();
  CHECK(t.grad.size() == 3);
  t.grad[1] = 5.0;
  t.zero_grad();
  CHECK(t.grad[1] == 0.0);
}

TEST_CASE("finiteness detection") {
  Tensor t = Tensor::row({1.0, 2.0});
  CHECK(t.finite());
  t.values[0] = 1.0 / 0.0;
  CHECK(!t.finite());
}

TEST_CASE("norm-wise relative error") {
  Tensor a = Tensor::row({1.0, 2.0});
  Tensor b = Tensor::row({1.0, 2.0 + 2e-6});
  CHECK(rel_error(a, b) == doctest::Approx(1e-6).epsilon(1e-3));
  Tensor z = Tensor::zeros({2});
  CHECK(rel_error(z, z) == 0.0);
}

TEST_CASE("rng streams are deterministic and seed-separated") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 16; ++i) {
    double x = a.uniform();
    CHECK(x == b.uniform());
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
  CHECK(a.uniform() != c.uniform());

  Rng d(7);
  double mean = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) mean += d.normal();
  mean /= n;
  CHECK(std::abs(mean) < 0.05);

  Rng e(9);
  for (int i = 0; i < 100; ++i) {
    auto v = e.uniform_int(3, 7);
    CHECK(v >= 3);
    CHECK(v <= 7);
  }

  CHECK(mix64(1, 2) != mix64(2, 1));
  CHECK(hash_str("block0.w_q") != hash_str("block1.w_q"));
}
