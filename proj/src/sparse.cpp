#include "nrsfm/sparse.hpp"

#include <algorithm>
#include <cmath>

#include "nrsfm/errors.hpp"

namespace nrsfm {

Dictionary::Dictionary(Mat atoms) : atoms_(std::move(atoms)) {
  if (atoms_.cols() < 1 || atoms_.rows() < 1) throw IllPosedDictionary("dictionary is empty");
  if (!atoms_.allFinite()) throw IllPosedDictionary("dictionary has non-finite entries");
  norms_ = atoms_.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < norms_.size(); ++j) {
    if (norms_(j) == 0.0) {
      throw IllPosedDictionary("dictionary atom " + std::to_string(j) + " is zero");
    }
  }
}

double Dictionary::spectral_norm_sq() const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(atoms_.transpose() * atoms_,
                                                     Eigen::EigenvaluesOnly);
  return eig.eigenvalues().maxCoeff();
}

BlockMatrix32::BlockMatrix32(Mat data) : data_(std::move(data)) {
  if (data_.cols() != 6) throw ShapeError("BlockMatrix32: expected L x 6 storage");
}

BlockMatrix32 BlockMatrix32::from_stacked(const Mat& stacked) {
  if (stacked.cols() != 2 || stacked.rows() % 3 != 0) {
    throw ShapeError("BlockMatrix32: stacked matrix must be (3L) x 2");
  }
  // Row-major (3L)x2 and Lx6 share the same memory order.
  Mat data = Eigen::Map<const Mat>(stacked.data(), stacked.rows() / 3, 6);
  return BlockMatrix32(std::move(data));
}

Mat BlockMatrix32::stacked() const {
  return Eigen::Map<const Mat>(data_.data(), data_.rows() * 3, 2);
}

Eigen::Index BlockMatrix32::active_blocks(double eps) const {
  Eigen::Index n = 0;
  for (Eigen::Index j = 0; j < block_count(); ++j) {
    if (block_norm(j) > eps) ++n;
  }
  return n;
}

Vec ista(const Dictionary& d, const Vec& x, double tau, double alpha, int iters) {
  if (x.size() != d.rows()) throw ShapeError("ista: measurement size does not match dictionary");
  if (iters < 1) throw ShapeError("ista: iters must be >= 1");
  const Mat& D = d.atoms();
  Vec z = Vec::Zero(d.cols());
  for (int it = 0; it < iters; ++it) {
    const Vec v = z - alpha * (D.transpose() * (D * z - x));
    z = v.unaryExpr([tau](double e) { return soft_threshold(e, tau); });
    if (!z.allFinite() || z.cwiseAbs().maxCoeff() > kDivergenceLimit) {
      throw DivergenceError("ista diverged at iteration " + std::to_string(it), it);
    }
  }
  return z;
}

BlockMatrix32 block_soft_threshold_exact(const BlockMatrix32& v, double tau) {
  BlockMatrix32 out(v.block_count());
  for (Eigen::Index j = 0; j < v.block_count(); ++j) {
    const double n = v.block_norm(j);
    if (n > tau) out.data().row(j) = ((n - tau) / n) * v.data().row(j);
  }
  return out;
}

BlockMatrix32 block_soft_threshold_approx(const BlockMatrix32& v, const Vec& b) {
  if (b.size() != v.block_count()) throw ShapeError("block threshold: one threshold per block");
  BlockMatrix32 out(v.block_count());
  for (Eigen::Index j = 0; j < v.block_count(); ++j) {
    const double t = b(j);
    for (int e = 0; e < 6; ++e) out.data()(j, e) = soft_threshold(v.data()(j, e), t);
  }
  return out;
}

BlockMatrix32 block_ista(const Dictionary& d, const BlockMatrix32& x, const Vec& b, double alpha,
                         int iters) {
  if (x.block_count() != d.rows()) throw ShapeError("block_ista: X must have one block per row of D");
  if (b.size() != d.cols()) throw ShapeError("block_ista: one threshold per code block");
  if (iters < 1) throw ShapeError("block_ista: iters must be >= 1");
  const Mat& D = d.atoms();
  BlockMatrix32 z(d.cols());
  for (int it = 0; it < iters; ++it) {
    BlockMatrix32 v(Mat(z.data() - alpha * (D.transpose() * (D * z.data() - x.data()))));
    z = block_soft_threshold_approx(v, b);
    if (!z.data().allFinite() || z.data().cwiseAbs().maxCoeff() > kDivergenceLimit) {
      throw DivergenceError("block_ista diverged at iteration " + std::to_string(it), it);
    }
  }
  return z;
}

double mutual_coherence(const Dictionary& d) {
  if (d.cols() < 2) throw IllPosedDictionary("mutual coherence needs at least two atoms");
  const Mat& D = d.atoms();
  const Vec& n = d.column_norms();
  double mu = 0.0;
  for (Eigen::Index i = 0; i < D.cols(); ++i) {
    for (Eigen::Index j = i + 1; j < D.cols(); ++j) {
      const double c = std::abs(D.col(i).dot(D.col(j))) / (n(i) * n(j));
      mu = std::max(mu, c);
    }
  }
  return std::min(mu, 1.0);
}

BlockMatrix32 single_iter_block_encode(const Dictionary& d, const BlockMatrix32& x, const Vec& b) {
  if (x.block_count() != d.rows()) throw ShapeError("block encode: X must have one block per row of D");
  if (b.size() != d.cols()) throw ShapeError("block encode: one bias per code block");
  Mat pre = d.atoms().transpose() * x.data();
  pre.colwise() -= b;
  return BlockMatrix32(Mat(pre.cwiseMax(0.0)));
}

}  // namespace nrsfm
