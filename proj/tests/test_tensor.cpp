#include "btar/tensor.hpp"

#include "oracles.hpp"

#include <doctest.h>

using namespace btar;

TEST_CASE("unfold follows the mode-n index map") {
  DenseTensor t({2, 2, 2});
  t.at({2, 1, 2}) = 7.5;
  const Matrix m = unfold(t, 1);
  REQUIRE(m.rows() == 2);
  REQUIRE(m.cols() == 4);
  CHECK(m(1, 2) == 7.5);  // element (2,1,2) -> row 2, column 3 (1-based)

  std::mt19937 gen(1);
  const DenseTensor r = oracle::random_tensor({3, 4, 2}, gen);
  for (int mode = 1; mode <= 3; ++mode) {
    const Matrix got = unfold(r, mode);
    const Matrix want = oracle::loop_unfold(r, mode);
    CHECK((got - want).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK_THROWS_AS(unfold(r, 0), std::out_of_range);
  CHECK_THROWS_AS(unfold(r, 4), std::out_of_range);
}

TEST_CASE("vec equals vec of the mode-1 unfolding bit-exactly") {
  std::mt19937 gen(2);
  const DenseTensor t = oracle::random_tensor({3, 2, 4, 2}, gen);
  const Matrix m = unfold(t, 1);
  const Eigen::Map<const Vector> mv(m.data(), m.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) CHECK(t.vec()[i] == mv[i]);
}

TEST_CASE("fold inverts unfold") {
  std::mt19937 gen(3);
  const DenseTensor t = oracle::random_tensor({3, 3, 2}, gen);
  const DenseTensor back = fold(unfold(t, 2), 2, t.shape());
  CHECK((back.vec() - t.vec()).cwiseAbs().maxCoeff() == 0.0);

  const DenseTensor z = fold(Matrix::Zero(3, 6), 2, {3, 3, 2});
  CHECK(z.vec().cwiseAbs().maxCoeff() == 0.0);

  // exhaustive elementwise check on a 2x3x2 tensor
  const DenseTensor s = oracle::random_tensor({2, 3, 2}, gen);
  const DenseTensor rt = fold(unfold(s, 1), 1, s.shape());
  for (int i1 = 1; i1 <= 2; ++i1)
    for (int i2 = 1; i2 <= 3; ++i2)
      for (int i3 = 1; i3 <= 2; ++i3)
        CHECK(rt.at({i1, i2, i3}) == s.at({i1, i2, i3}));

  CHECK_THROWS_AS(fold(Matrix::Zero(2, 5), 1, {2, 3, 2}), std::invalid_argument);
}

TEST_CASE("fold/unfold round trip holds for every mode up to order 6") {
  std::mt19937 gen(4);
  const std::vector<std::vector<int>> shapes{{4}, {3, 2}, {2, 3, 2}, {2, 2, 3, 2}, {2, 2, 2, 2, 2},
                                             {2, 3, 1, 2, 1, 3}};
  for (const auto& shape : shapes) {
    const DenseTensor t = oracle::random_tensor(shape, gen);
    for (int mode = 1; mode <= t.order(); ++mode) {
      const DenseTensor back = fold(unfold(t, mode), mode, shape);
      CHECK((back.vec() - t.vec()).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("generalized inner product") {
  std::mt19937 gen(5);
  const DenseTensor x = oracle::random_tensor({2, 3, 2}, gen);
  const DenseTensor full = gen_inner(x, x);
  CHECK(full.order() == 0);
  CHECK(full.scalar() == doctest::Approx(x.vec().squaredNorm()).epsilon(1e-14));

  // sixth-order against a third-order tensor, checked by the loop oracle
  const DenseTensor b = oracle::random_tensor({2, 2, 2, 2, 2, 2}, gen);
  const DenseTensor y = oracle::random_tensor({2, 2, 2}, gen);
  const DenseTensor got = gen_inner(b, y);
  const DenseTensor want = oracle::loop_gen_inner(b, y);
  REQUIRE(got.shape() == std::vector<int>{2, 2, 2});
  CHECK((got.vec() - want.vec()).cwiseAbs().maxCoeff() <= 1e-12 * want.vec().cwiseAbs().maxCoeff());

  DenseTensor ones_b({2, 2, 2, 2, 2, 2});
  ones_b.vec().setOnes();
  DenseTensor ones_y({2, 2, 2});
  ones_y.vec().setOnes();
  const DenseTensor sums = gen_inner(ones_b, ones_y);
  for (Eigen::Index i = 0; i < sums.size(); ++i) CHECK(sums.vec()[i] == 8.0);

  CHECK_THROWS_AS(gen_inner(y, x), std::invalid_argument);
}

TEST_CASE("mode multiply") {
  std::mt19937 gen(6);
  const DenseTensor t = oracle::random_tensor({2, 3, 2}, gen);

  const DenseTensor same = mode_multiply(t, Matrix::Identity(3, 3), 2);
  CHECK((same.vec() - t.vec()).cwiseAbs().maxCoeff() == 0.0);

  // multiplies along distinct modes commute
  const Matrix m1 = oracle::random_matrix(4, 2, gen);
  const Matrix m3 = oracle::random_matrix(3, 2, gen);
  const DenseTensor ab = mode_multiply(mode_multiply(t, m1, 1), m3, 3);
  const DenseTensor ba = mode_multiply(mode_multiply(t, m3, 3), m1, 1);
  CHECK((ab.vec() - ba.vec()).cwiseAbs().maxCoeff() <= 1e-12);

  // 1x2 all-ones matrix on mode 3 sums the mode-3 fibers
  const DenseTensor s = oracle::random_tensor({2, 2, 2}, gen);
  const DenseTensor fs = mode_multiply(s, Matrix::Ones(1, 2), 3);
  REQUIRE(fs.shape() == std::vector<int>{2, 2, 1});
  for (int i1 = 1; i1 <= 2; ++i1)
    for (int i2 = 1; i2 <= 2; ++i2)
      CHECK(fs.at({i1, i2, 1}) ==
            doctest::Approx(s.at({i1, i2, 1}) + s.at({i1, i2, 2})).epsilon(1e-14));

  CHECK_THROWS_AS(mode_multiply(t, Matrix::Identity(2, 2), 2), std::invalid_argument);

  // consistency: unfold(t x_n M, n) == M unfold(t, n)
  const DenseTensor big = oracle::random_tensor({3, 2, 2, 2}, gen);
  const Matrix m = oracle::random_matrix(4, 2, gen);
  const DenseTensor prod = mode_multiply(big, m, 3);
  CHECK((unfold(prod, 3) - m * unfold(big, 3)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("kronecker product") {
  CHECK((kron(Matrix::Identity(2, 2), Matrix::Identity(3, 3)) - Matrix::Identity(6, 6))
            .cwiseAbs()
            .maxCoeff() == 0.0);

  std::mt19937 gen(7);
  const Matrix a = oracle::random_matrix(2, 3, gen);
  const Matrix b = oracle::random_matrix(3, 2, gen);
  const Matrix x = oracle::random_matrix(2, 2, gen);
  // kron(A,B) vec(X) = vec(B X A') for conformable X (here X is cols(B) x cols(A))
  const Matrix x32 = oracle::random_matrix(2, 3, gen);
  const Vector lhs = kron(a, b) * Eigen::Map<const Vector>(x32.data(), x32.size());
  const Matrix rhs_m = b * x32 * a.transpose();
  const Eigen::Map<const Vector> rhs(rhs_m.data(), rhs_m.size());
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);

  Matrix two(1, 1);
  two << 2.0;
  CHECK((kron(two, b) - 2.0 * b).cwiseAbs().maxCoeff() == 0.0);
  (void)x;
}

TEST_CASE("frobenius norm") {
  DenseTensor e({2, 2, 2});
  e.at({1, 2, 1}) = 1.0;
  CHECK(frobenius_norm(e) == 1.0);

  DenseTensor ones({2, 2, 2});
  ones.vec().setOnes();
  CHECK(frobenius_norm(ones) == doctest::Approx(std::sqrt(8.0)).epsilon(1e-14));

  std::mt19937 gen(8);
  const DenseTensor t = oracle::random_tensor({3, 2, 2}, gen);
  CHECK(frobenius_norm(t) ==
        doctest::Approx(std::sqrt(gen_inner(t, t).scalar())).epsilon(1e-12));
}

TEST_CASE("gen_inner matches the loop oracle on small random inputs") {
  std::mt19937 gen(9);
  for (int rep = 0; rep < 10; ++rep) {
    const DenseTensor x = oracle::random_tensor({3, 2, 3, 2}, gen);
    const DenseTensor y = oracle::random_tensor({3, 2}, gen);
    const DenseTensor got = gen_inner(x, y);
    const DenseTensor want = oracle::loop_gen_inner(x, y);
    const double scale = std::max(1.0, want.vec().cwiseAbs().maxCoeff());
    CHECK((got.vec() - want.vec()).cwiseAbs().maxCoeff() <= 1e-12 * scale);
  }
}

TEST_CASE("tensor invariants and error paths") {
  CHECK_THROWS_AS(DenseTensor({2, 0, 2}), std::invalid_argument);
  CHECK_THROWS_AS(DenseTensor({2, 2}, Vector::Zero(3)), std::invalid_argument);
  DenseTensor t({2, 2});
  CHECK_THROWS_AS(t.at({3, 1}), std::out_of_range);
  CHECK_THROWS_AS(t.at({1, 1, 1}), std::invalid_argument);
}
