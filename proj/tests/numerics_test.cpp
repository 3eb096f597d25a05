#include <doctest.h>

#include <cmath>
#include <random>

#include "xtf/numerics/dense.hpp"
#include "xtf/numerics/gradcheck.hpp"
#include "xtf/numerics/tape.hpp"

using namespace xtf;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Matrix triple_loop(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double s = 0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

}  // namespace

TEST_CASE("matmul") {
  std::mt19937_64 rng(1);
  Matrix x = random_matrix(rng, 3, 4);
  CHECK(matmul<double>(Matrix::Identity(3, 3), x) == x);

  Matrix a(2, 2), id(2, 2);
  a << 1, 2, 3, 4;
  id << 1, 0, 0, 1;
  CHECK(matmul(a, id) == a);

  for (int trial = 0; trial < 20; ++trial) {
    Matrix p = random_matrix(rng, 4, 5), q = random_matrix(rng, 5, 3);
    CHECK(matmul(p, q) == triple_loop(p, q));
  }
  CHECK_THROWS_AS(matmul<double>(Matrix(2, 3), Matrix(2, 3)), DimensionError);
}

TEST_CASE("softmax") {
  Matrix z = Matrix::Zero(1, 2);
  CHECK(softmax(z)(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(softmax(z)(0, 1) == doctest::Approx(0.5).epsilon(1e-15));

  Matrix four = Matrix::Constant(1, 4, 3.7);
  for (int j = 0; j < 4; ++j) CHECK(std::abs(softmax(four)(0, j) - 0.25) < 1e-15);

  // Oracle: direct exp/sum in long double.
  Matrix x(1, 3);
  x << 1, 2, 3;
  const long double e1 = std::exp(1.0L), e2 = std::exp(2.0L), e3 = std::exp(3.0L), tot = e1 + e2 + e3;
  const Matrix s = softmax(x);
  CHECK(std::abs(s(0, 0) - static_cast<double>(e1 / tot)) < 1e-12);
  CHECK(std::abs(s(0, 1) - static_cast<double>(e2 / tot)) < 1e-12);
  CHECK(std::abs(s(0, 2) - static_cast<double>(e3 / tot)) < 1e-12);

  Matrix big(1, 3);
  big << 1000, 1001, 1002;
  CHECK((softmax(big) - s).cwiseAbs().maxCoeff() < 1e-12);

  Matrix bad(1, 2);
  bad << 0, std::nan("");
  CHECK_THROWS_AS(softmax(bad), InputError);
}

TEST_CASE("softmax rows sum to one over random shapes and both axes") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index r = 1 + static_cast<Eigen::Index>(rng() % 9), c = 1 + static_cast<Eigen::Index>(rng() % 9);
    const Matrix x = random_matrix(rng, r, c, 5.0);
    const Matrix by_col = softmax(x, Axis::kCols);
    for (Eigen::Index i = 0; i < r; ++i) CHECK(std::abs(by_col.row(i).sum() - 1.0) < 1e-12);
    const Matrix by_row = softmax(x, Axis::kRows);
    for (Eigen::Index j = 0; j < c; ++j) CHECK(std::abs(by_row.col(j).sum() - 1.0) < 1e-12);
    CHECK((by_col.array() > 0).all());
    CHECK((by_col.array() < 1 + 1e-15).all());
    const Matrix ls = log_softmax(x);
    CHECK((ls.array().exp().matrix() - by_col).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("backward on simple losses") {
  std::mt19937_64 rng(3);
  const Matrix x0 = random_matrix(rng, 3, 2);

  Tape tape;
  Var x = tape.leaf(x0);
  Var loss = sum(mul(x, x));
  const auto grads = tape.backward(loss);
  REQUIRE(grads.size() == 1);
  CHECK(grads[0] == 2.0 * x0);

  Tape t2;
  Var unused = t2.leaf(x0);
  (void)unused;
  Var c = t2.constant(Matrix::Constant(1, 1, 4.0));
  const auto zero = t2.backward(sum(c));
  CHECK(zero[0] == Matrix::Zero(3, 2));

  Tape t3;
  Var y = t3.leaf(x0);
  CHECK_THROWS_AS(t3.backward(y), ContractError);
}

TEST_CASE("finite_diff_check on a quadratic and a corrupted gradient") {
  std::mt19937_64 rng(11);
  const std::vector<Matrix> params = {random_matrix(rng, 3, 3), random_matrix(rng, 1, 4)};
  const LossFn loss = [](const std::vector<Matrix>& p) {
    return 0.5 * p[0].squaredNorm() + 3.0 * p[1].squaredNorm() + p[0].sum();
  };
  const GradFn grad = [](const std::vector<Matrix>& p) {
    return std::vector<Matrix>{p[0] + Matrix::Ones(3, 3), 6.0 * p[1]};
  };
  CHECK(finite_diff_check(loss, grad, params, 1e-5) <= 1e-9);

  const GradFn doubled = [&](const std::vector<Matrix>& p) {
    auto g = grad(p);
    for (auto& m : g) m *= 2.0;
    return g;
  };
  // |2g - g| / (|2g| + |g|) = 1/3
  CHECK(finite_diff_check(loss, doubled, params, 1e-5) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  CHECK_THROWS_AS(finite_diff_check(loss, grad, params, 0.0), ContractError);
}

TEST_CASE("every op in the set passes finite differences inside random compositions") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<Matrix> params = {random_matrix(rng, 4, 6, 0.5), random_matrix(rng, 6, 6, 0.5),
                                        random_matrix(rng, 1, 6, 0.5), random_matrix(rng, 1, 6, 0.5),
                                        random_matrix(rng, 7, 6, 0.5)};
    const std::vector<int> ids = {3, 0, 6, 6};
    const std::vector<int> targets = {1, 5, 0, 3};
    const std::vector<double> weights = {1.0, 0.0, 2.0, 0.5};

    auto build = [&](Tape& t, const std::vector<Matrix>& p) {
      std::vector<Var> v;
      for (const Matrix& m : p) v.push_back(t.leaf(m));
      Var x = add(v[0], gather_rows(v[4], ids));
      Var h = layer_norm(x, v[2], v[3]);
      Var y = add_row(matmul(h, v[1]), v[3]);
      Var a = causal_softmax(scale(matmul(slice_cols(y, 0, 3), transpose(slice_cols(y, 3, 3))), 0.7));
      Var parts[] = {matmul(a, slice_cols(y, 0, 3)), gelu(slice_cols(y, 3, 3))};
      Var z = concat_cols(parts);
      return add(cross_entropy(z, targets, weights), scale(sum(mul(z, z)), 0.01));
    };
    const LossFn loss = [&](const std::vector<Matrix>& p) {
      Tape t;
      return build(t, p).value()(0, 0);
    };
    const GradFn grad = [&](const std::vector<Matrix>& p) {
      Tape t;
      return t.backward(build(t, p));
    };
    CHECK(finite_diff_check(loss, grad, params, 1e-5) <= 1e-4);
  }
}

TEST_CASE("causal softmax masks the future exactly") {
  std::mt19937_64 rng(9);
  Tape t;
  Var s = t.leaf(random_matrix(rng, 5, 5, 3.0));
  const Matrix& p = causal_softmax(s).value();
  for (Eigen::Index q = 0; q < 5; ++q) {
    CHECK(std::abs(p.row(q).sum() - 1.0) < 1e-12);
    for (Eigen::Index k = q + 1; k < 5; ++k) CHECK(p(q, k) == 0.0);
  }
}

TEST_CASE("ops are deterministic") {
  std::mt19937_64 rng(2);
  const Matrix a = random_matrix(rng, 6, 9), b = random_matrix(rng, 9, 4);
  CHECK(matmul(a, b) == matmul(a, b));
  CHECK(softmax(a) == softmax(a));
}

TEST_CASE("non-finite values raise instead of propagating") {
  Tape t;
  Matrix m = Matrix::Zero(1, 2);
  m(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(t.leaf(m), NumericError);
}
