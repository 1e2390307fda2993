#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "hyperadapt/matrix.hpp"
#include "hyperadapt/random.hpp"
#include "hyperadapt/tensor.hpp"

namespace testing {

using hyperadapt::Matrix;
using hyperadapt::Rng;
using hyperadapt::Shape;
using hyperadapt::Tensor;

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  const auto n = hyperadapt::shape_product(shape);
  return Tensor(std::move(shape), hyperadapt::normal_vector(rng, n, scale));
}

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  return Matrix(r, c, hyperadapt::normal_vector(rng, r * c));
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  const auto x = a.data();
  const auto y = b.data();
  if (x.size() != y.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("hyperadapt-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
