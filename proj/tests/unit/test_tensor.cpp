#include <doctest.h>

#include "hyperadapt/binary_io.hpp"
#include "hyperadapt/errors.hpp"
#include "hyperadapt/linalg.hpp"
#include "hyperadapt/tensor.hpp"
#include "support.hpp"

using namespace hyperadapt;
using testing::max_abs_diff;
using testing::random_matrix;
using testing::random_tensor;

TEST_CASE("tensor construction validates shape") {
  CHECK_THROWS_AS(Tensor(Shape{}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, {1, 2, 3}), ShapeError);
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  t.at({1, 2}) = 5.0;
  CHECK(t[5] == 5.0);
  CHECK_THROWS_AS(t.at({2, 0}), IndexError);
  CHECK_THROWS_AS(t.at({0}), IndexError);
}

TEST_CASE("unfold of a matrix is the matrix itself") {
  const Tensor t({2, 2}, {1, 2, 3, 4});
  const Matrix m = unfold(t, 0);
  CHECK(m == Matrix::from_rows({{1, 2}, {3, 4}}));
}

TEST_CASE("unfold enumerates remaining axes row-major") {
  std::vector<double> data(12);
  for (std::size_t i = 0; i < 12; ++i) data[i] = static_cast<double>(i + 1);
  const Tensor t({3, 2, 2}, data);
  for (std::size_t mode = 0; mode < 3; ++mode) {
    const Matrix m = unfold(t, mode);
    REQUIRE(m.rows() == t.shape()[mode]);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t k = 0; k < 2; ++k) {
          const std::size_t idx[3] = {i, j, k};
          std::size_t col = 0;
          for (std::size_t a = 0; a < 3; ++a) {
            if (a == mode) continue;
            col = col * t.shape()[a] + idx[a];
          }
          CHECK(m(idx[mode], col) == t(i, j, k));
        }
  }
  const Matrix m0 = unfold(t, 0);
  CHECK(m0.rows() == 3);
  CHECK(m0.cols() == 4);
  CHECK(m0(0, 0) == 1);
  CHECK(m0(0, 3) == 4);
  CHECK_THROWS_AS(unfold(t, 3), IndexError);
}

TEST_CASE("fold inverts unfold bit-exactly") {
  Rng rng(3);
  for (const Shape& s : {Shape{4}, Shape{3, 5}, Shape{2, 3, 4}, Shape{2, 1, 3, 2}}) {
    const Tensor t = random_tensor(rng, s);
    for (std::size_t m = 0; m < s.size(); ++m) CHECK(fold(unfold(t, m), m, s) == t);
  }
}

TEST_CASE("mode product matches the elementwise definition") {
  Rng rng(5);
  const Tensor t = random_tensor(rng, {3, 4, 5});
  CHECK(mode_product(t, Matrix::identity(4), 1) == t);

  const Tensor ones({3, 2, 2}, std::vector<double>(12, 1.0));
  const Tensor summed = mode_product(ones, Matrix(1, 3, {1, 1, 1}), 0);
  CHECK(summed.shape() == Shape{1, 2, 2});
  for (double v : summed.data()) CHECK(v == 3.0);

  const Matrix m = random_matrix(rng, 2, 4);
  const Tensor r = mode_product(t, m, 1);
  REQUIRE(r.shape() == Shape{3, 2, 5});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t k = 0; k < 5; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < 4; ++j) s += m(a, j) * t(i, j, k);
        CHECK(r(i, a, k) == doctest::Approx(s).epsilon(1e-14));
      }
  CHECK_THROWS_AS(mode_product(t, random_matrix(rng, 2, 3), 1), ShapeError);
}

TEST_CASE("mode products on distinct modes commute") {
  Rng rng(6);
  const Tensor t = random_tensor(rng, {3, 4, 5});
  const Matrix a = random_matrix(rng, 2, 3);
  const Matrix b = random_matrix(rng, 6, 4);
  const Tensor ab = mode_product(mode_product(t, a, 0), b, 1);
  const Tensor ba = mode_product(mode_product(t, b, 1), a, 0);
  CHECK(max_abs_diff(ab, ba) <= 1e-12 * frobenius_norm(ab));
}

TEST_CASE("outer3") {
  const Tensor one = outer3(std::vector<double>{1}, std::vector<double>{1}, std::vector<double>{1});
  CHECK(one.shape() == Shape{1, 1, 1});
  CHECK(one[0] == 1.0);

  const Tensor t = outer3(std::vector<double>{1, 0}, std::vector<double>{1, 1}, std::vector<double>{2});
  CHECK(t.values() == std::vector<double>{2, 2, 0, 0});

  Rng rng(7);
  const auto a = normal_vector(rng, 3), b = normal_vector(rng, 4), c = normal_vector(rng, 5);
  const auto s = svd(unfold(outer3(a, b, c), 0)).s;
  CHECK(s[0] > 1.0e-3);
  CHECK(s[1] <= 1e-12 * s[0]);
  CHECK(s[2] <= 1e-12 * s[0]);
}

TEST_CASE("frobenius norm") {
  CHECK(frobenius_norm(Tensor({3, 3})) == 0.0);
  CHECK(frobenius_norm(Tensor({2, 2}, {3, 4, 0, 0})) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(std::isfinite(frobenius_norm(Tensor({2}, {1e200, 1e200}))));

  Rng rng(8);
  const Tensor t = random_tensor(rng, {3, 4, 5});
  const double n = frobenius_norm(t);
  for (std::size_t m = 0; m < 3; ++m) {
    const Matrix u = unfold(t, m);
    CHECK(std::abs(frobenius_norm(u.data()) - n) <= 1e-12 * n);
  }
}

TEST_CASE("khatri-rao product") {
  const Matrix ones = Matrix::from_rows({{1}, {1}});
  const Matrix k = khatri_rao(ones, ones);
  CHECK(k.rows() == 4);
  for (double v : k.data()) CHECK(v == 1.0);

  const Matrix k2 = khatri_rao(Matrix::from_rows({{2}, {3}}), Matrix::from_rows({{1}, {0}}));
  CHECK(std::vector<double>(k2.data().begin(), k2.data().end()) == std::vector<double>{2, 0, 3, 0});

  Rng rng(9);
  const Matrix a = random_matrix(rng, 4, 3), b = random_matrix(rng, 5, 3);
  const Matrix kr = khatri_rao(a, b);
  const Matrix lhs = matmul_tn(kr, kr);
  const Matrix rhs = hadamard(matmul_tn(a, a), matmul_tn(b, b));
  CHECK(max_abs_diff(lhs, rhs) <= 1e-12 * testing::max_abs(rhs.data()));
  CHECK_THROWS_AS(khatri_rao(a, random_matrix(rng, 5, 2)), ShapeError);
}

TEST_CASE("TNS1 round trip and truncation") {
  Rng rng(10);
  const Tensor t = random_tensor(rng, {2, 3, 4});
  const Bytes bytes = encode_tensor(t);
  CHECK(bytes.size() == 4 + 4 + 3 * 4 + 24 * 8);
  CHECK(decode_tensor(bytes) == t);

  const Bytes cut(bytes.begin(), bytes.end() - 3);
  try {
    decode_tensor(cut, "cut.tns");
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("cut.tns") != std::string::npos);
    CHECK(msg.find("expected 212 bytes") != std::string::npos);
    CHECK(msg.find("only 209 available") != std::string::npos);
  }

  Bytes bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_tensor(bad), FormatError);

  BinaryWriter w;
  w.magic("TNS1");
  w.u32(2);
  w.u32(3);
  w.u32(0);
  CHECK_THROWS_AS(decode_tensor(w.take()), FormatError);

  testing::TempDir dir("tns");
  save_tensor(dir / "t.tns", t);
  CHECK(load_tensor(dir / "t.tns") == t);
  CHECK_FALSE(std::filesystem::exists(dir / "t.tns.tmp"));
  CHECK_THROWS_AS(load_tensor(dir / "missing.tns"), IoError);
}
