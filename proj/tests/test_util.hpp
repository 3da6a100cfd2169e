#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "nrsfm/numerics.hpp"

namespace nrsfm::testing_util {

inline Mat gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline Vec gaussian_vec(Eigen::Index n, std::mt19937_64& rng) {
  Mat m = gaussian(n, 1, rng);
  return Eigen::Map<Vec>(m.data(), n);
}

// Materialized D (x) I3.
inline Mat kron_identity3(const Mat& d) {
  Mat k = Mat::Zero(3 * d.rows(), 3 * d.cols());
  for (Eigen::Index i = 0; i < d.rows(); ++i)
    for (Eigen::Index j = 0; j < d.cols(); ++j)
      for (int c = 0; c < 3; ++c) k(3 * i + c, 3 * j + c) = d(i, j);
  return k;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("nrsfm_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace nrsfm::testing_util
