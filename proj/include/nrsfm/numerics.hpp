#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace nrsfm {

// Row-major dense matrix used for every observation, shape, camera and
// intermediate feature in the pipeline.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Thin SVD a = u * diag(sigma) * v^T with sigma sorted descending.
struct SvdThin {
  Mat u;
  Vec sigma;
  Mat v;
};

inline double soft_threshold(double x, double tau) {
  if (x > tau) return x - tau;
  if (x < -tau) return x + tau;
  return 0.0;
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

// Thin SVD of a tall matrix (rows >= cols). 3x2 inputs take a closed-form
// path through the 2x2 Gram matrix unless it is close to singular.
// Throws NumericalFailure on non-finite input.
SvdThin svd_thin(const Mat& a);

// General path only; exposed so tests can compare it with the 3x2 fast path.
SvdThin svd_thin_general(const Mat& a);

// Polar factor of a 3x2 camera: nearest matrix with orthonormal columns.
// Throws DegenerateCamera when sigma_min < 1e-12 * sigma_max.
Mat polar_project(const Mat& m);

// Same as polar_project but also returns the decomposition it used, which the
// network needs for the backward pass.
Mat polar_project(const Mat& m, SvdThin& svd);

// First two columns of a Haar-distributed rotation, deterministic per seed.
Mat random_orthonormal_camera(std::uint64_t seed);

// Mixes a master seed with stream indices (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

inline constexpr double kDegenerateCameraRatio = 1e-12;

}  // namespace nrsfm
