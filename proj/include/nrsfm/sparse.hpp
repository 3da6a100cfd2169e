#pragma once

#include <Eigen/Dense>

#include "nrsfm/numerics.hpp"

namespace nrsfm {

/// A dictionary whose columns are atoms. Construction rejects zero or
/// non-finite atoms, so every Dictionary is usable for coherence and ISTA.
class Dictionary {
 public:
  explicit Dictionary(Mat atoms);

  const Mat& atoms() const { return atoms_; }
  const Vec& column_norms() const { return norms_; }
  Eigen::Index rows() const { return atoms_.rows(); }
  Eigen::Index cols() const { return atoms_.cols(); }

  /// Largest singular value squared, i.e. the Lipschitz constant of the
  /// least-squares gradient.
  double spectral_norm_sq() const;

 private:
  Mat atoms_;
  Vec norms_;
};

/// A stack of L blocks of size 3x2, stored one block per row (row j holds
/// block j flattened row-major). This is the layout of a 1x1-convolution
/// feature map with L channels over a 3x2 grid, so (D (x) I3)^T Psi becomes
/// the plain product D^T * data().
class BlockMatrix32 {
 public:
  using Block = Eigen::Matrix<double, 3, 2, Eigen::RowMajor>;

  BlockMatrix32() = default;
  explicit BlockMatrix32(Eigen::Index blocks) : data_(Mat::Zero(blocks, 6)) {}
  explicit BlockMatrix32(Mat data);

  /// From the stacked (3L)x2 matrix representation.
  static BlockMatrix32 from_stacked(const Mat& stacked);
  Mat stacked() const;

  Eigen::Index block_count() const { return data_.rows(); }
  Eigen::Map<Block> block(Eigen::Index j) { return Eigen::Map<Block>(data_.row(j).data()); }
  Eigen::Map<const Block> block(Eigen::Index j) const {
    return Eigen::Map<const Block>(data_.row(j).data());
  }

  const Mat& data() const { return data_; }
  Mat& data() { return data_; }

  double block_norm(Eigen::Index j) const { return data_.row(j).norm(); }
  Eigen::Index active_blocks(double eps) const;

 private:
  Mat data_;  // L x 6
};

/// Plain ISTA from z = 0: z <- h_tau(z - alpha * D^T (D z - x)).
/// Throws DivergenceError when |z|_inf exceeds 1e12.
Vec ista(const Dictionary& d, const Vec& x, double tau, double alpha, int iters);

/// Group soft threshold: each block scaled by max(|V_j|_F - tau, 0)/|V_j|_F.
BlockMatrix32 block_soft_threshold_exact(const BlockMatrix32& v, double tau);

/// Entrywise soft threshold with a per-block threshold b_j.
BlockMatrix32 block_soft_threshold_approx(const BlockMatrix32& v, const Vec& b);

/// Block ISTA for X = (D (x) I3) Z, where D is m x L, X has m blocks and Z has
/// L blocks. Iterates V = Z - alpha (D (x) I3)^T ((D (x) I3) Z - X) followed by
/// the approximate block threshold.
BlockMatrix32 block_ista(const Dictionary& d, const BlockMatrix32& x, const Vec& b, double alpha,
                         int iters);

/// Max normalized absolute inner product between distinct atoms.
double mutual_coherence(const Dictionary& d);

/// relu((D (x) I3)^T X - b (x) 1_{3x2}); one block-ISTA step with alpha = 1
/// restricted to the nonnegative orthant.
BlockMatrix32 single_iter_block_encode(const Dictionary& d, const BlockMatrix32& x, const Vec& b);

inline constexpr double kDivergenceLimit = 1e12;

}  // namespace nrsfm
