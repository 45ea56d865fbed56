#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "ega/embeddings.hpp"

namespace ega::test {

template <typename T = double>
std::vector<T> random_unit(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  std::vector<double> v(d);
  double s = 0.0;
  for (double& x : v) {
    x = n(rng);
    s += x * x;
  }
  s = std::sqrt(s);
  std::vector<T> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<T>(v[i] / s);
  return out;
}

template <typename T = double>
std::vector<T> random_normal(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(g(rng));
  return v;
}

/// |a - b| relative to the larger magnitude, with an absolute floor so
/// entries that are zero analytically are compared against FD noise.
inline double rel_err(double a, double b, double floor = 1e-5) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Random unit vectors with labels 0..classes-1 in round-robin order.
inline EmbeddingSet random_set(std::size_t n, std::size_t d, std::size_t classes,
                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  EmbeddingSet s;
  s.dim = d;
  for (std::size_t i = 0; i < n; ++i) {
    auto v = random_unit<float>(d, rng);
    s.vectors.insert(s.vectors.end(), v.begin(), v.end());
    s.labels.push_back(static_cast<std::uint32_t>(i % classes));
  }
  return s;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ega_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace ega::test
