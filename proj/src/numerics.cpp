#include "nrsfm/numerics.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "nrsfm/errors.hpp"

namespace nrsfm {
namespace {

std::string describe(const Mat& a) {
  std::ostringstream os;
  os.precision(17);
  os << a.rows() << "x" << a.cols() << " [";
  for (Eigen::Index i = 0; i < a.size(); ++i) os << (i ? " " : "") << a.data()[i];
  os << "]";
  return os.str();
}

void require_finite(const Mat& a) {
  if (!a.allFinite()) throw NumericalFailure("svd_thin: non-finite input", describe(a));
}

// Closed-form 3x2 SVD from the eigen-decomposition of the 2x2 Gram matrix.
// Returns false when the Gram matrix is too close to singular for the
// recovered left vectors to be orthonormal to ~1e-12.
bool svd_3x2_gram(const Mat& m, SvdThin& out) {
  const Eigen::Vector3d c0 = m.col(0);
  const Eigen::Vector3d c1 = m.col(1);
  const double a = c0.squaredNorm();
  const double b = c0.dot(c1);
  const double c = c1.squaredNorm();
  if (a + c == 0.0) return false;

  // Rotation that diagonalizes [[a, b], [b, c]]; the first column is the
  // eigenvector of the larger eigenvalue.
  const double theta = 0.5 * std::atan2(2.0 * b, a - c);
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  Eigen::Vector2d v1(cs, sn);
  Eigen::Vector2d v2(-sn, cs);

  Eigen::Vector3d u1 = cs * c0 + sn * c1;
  Eigen::Vector3d u2 = -sn * c0 + cs * c1;
  const double s1 = u1.norm();
  const double s2 = u2.norm();
  if (s1 == 0.0 || s2 < 1e-4 * s1) return false;

  u1 /= s1;
  u2 -= u1.dot(u2) * u1;
  u2.normalize();

  out.u.resize(3, 2);
  out.u.col(0) = u1;
  out.u.col(1) = u2;
  out.sigma.resize(2);
  out.sigma << s1, s2;
  out.v.resize(2, 2);
  out.v.col(0) = v1;
  out.v.col(1) = v2;
  return true;
}

}  // namespace

SvdThin svd_thin_general(const Mat& a) {
  require_finite(a);
  if (a.rows() < a.cols()) throw ShapeError("svd_thin: expected rows >= cols");
  Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) {
    throw NumericalFailure("svd_thin: Jacobi iteration did not converge", describe(a));
  }
  SvdThin out{svd.matrixU(), svd.singularValues(), svd.matrixV()};
  if (!out.u.allFinite() || !out.v.allFinite() || !out.sigma.allFinite()) {
    throw NumericalFailure("svd_thin: non-finite factors", describe(a));
  }
  return out;
}

SvdThin svd_thin(const Mat& a) {
  require_finite(a);
  if (a.rows() == 3 && a.cols() == 2) {
    SvdThin out;
    if (svd_3x2_gram(a, out)) return out;
  }
  return svd_thin_general(a);
}

Mat polar_project(const Mat& m, SvdThin& svd) {
  if (m.rows() != 3 || m.cols() != 2) throw ShapeError("polar_project: expected a 3x2 camera");
  if (!m.allFinite()) throw DegenerateCamera("polar_project: non-finite camera");
  svd = svd_thin(m);
  const double smax = svd.sigma(0);
  const double smin = svd.sigma(1);
  if (!(smax > 0.0) || smin < kDegenerateCameraRatio * smax) {
    throw DegenerateCamera("polar_project: rank-deficient camera");
  }
  return svd.u * svd.v.transpose();
}

Mat polar_project(const Mat& m) {
  SvdThin svd;
  return polar_project(m, svd);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

Mat random_orthonormal_camera(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Matrix3d g;
  for (int i = 0; i < 9; ++i) g.data()[i] = normal(rng);

  Eigen::HouseholderQR<Eigen::Matrix3d> qr(g);
  Eigen::Matrix3d q = qr.householderQ();
  const Eigen::Matrix3d r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Sign convention making the factorization unique gives the Haar measure.
  for (int i = 0; i < 3; ++i) {
    if (r(i, i) < 0.0) q.col(i) *= -1.0;
  }
  if (q.determinant() < 0.0) q.col(2) *= -1.0;

  Mat cam(3, 2);
  cam = q.leftCols(2);
  return cam;
}

}  // namespace nrsfm
