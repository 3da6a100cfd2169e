#include "nrsfm/eval.hpp"

#include <algorithm>
#include <cmath>

#include "nrsfm/checkpoint.hpp"
#include "nrsfm/errors.hpp"

namespace nrsfm {

Eigen::Matrix3d align_orthonormal(const Mat& s_est, const Mat& s_gt) {
  if (s_est.rows() != s_gt.rows() || s_est.cols() != 3 || s_gt.cols() != 3) {
    throw ShapeError("align_orthonormal: shapes must both be p x 3");
  }
  if (!s_est.allFinite() || !s_gt.allFinite()) throw DegenerateAlignment("align_orthonormal: non-finite shape");
  if (s_gt.norm() == 0.0) throw DegenerateAlignment("align_orthonormal: ground truth is zero");
  if (s_est == s_gt) return Eigen::Matrix3d::Identity();
  const Eigen::Matrix3d cross = s_est.transpose() * s_gt;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

namespace {

Mat visible_rows(const Mat& m, const std::vector<bool>& vis) {
  const auto n = std::count(vis.begin(), vis.end(), true);
  Mat out(n, m.cols());
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    if (vis[i]) out.row(r++) = m.row(i);
  return out;
}

}  // namespace

EvalReport normalized_3d_error(const std::vector<Mat>& estimates, const std::vector<Mat>& ground_truth,
                               const std::vector<std::vector<bool>>* visibility) {
  if (estimates.size() != ground_truth.size()) throw ShapeError("normalized_3d_error: frame count mismatch");
  if (visibility && visibility->size() != estimates.size()) {
    throw ShapeError("normalized_3d_error: visibility frame count mismatch");
  }
  EvalReport rep;
  rep.per_frame_errors.reserve(estimates.size());
  for (std::size_t f = 0; f < estimates.size(); ++f) {
    Mat est = estimates[f];
    Mat gt = ground_truth[f];
    if (est.rows() != gt.rows()) throw ShapeError("normalized_3d_error: point count mismatch");
    if (visibility) {
      est = visible_rows(est, (*visibility)[f]);
      gt = visible_rows(gt, (*visibility)[f]);
    }
    const Eigen::Matrix3d r = align_orthonormal(est, gt);
    rep.per_frame_errors.push_back((est * r - gt).norm() / gt.norm());
  }
  double sum = 0.0;
  for (double e : rep.per_frame_errors) sum += e;
  rep.mean_error = rep.per_frame_errors.empty() ? 0.0 : sum / static_cast<double>(rep.per_frame_errors.size());
  return rep;
}

std::vector<Mat> reconstruct(const TrackSet& ts, const ModelParams& params) {
  std::vector<Mat> out;
  out.reserve(ts.size());
  for (const auto& fr : ts.frames) {
    try {
      out.push_back(forward(fr.points, params).shape);
    } catch (const DegenerateCamera&) {
      out.push_back(Mat::Zero(ts.points, 3));
    }
  }
  return out;
}

std::vector<Mat> ground_truth_shapes(const TrackSet& ts) {
  if (!ts.has_ground_truth()) throw ShapeError("track set carries no ground truth");
  std::vector<Mat> out;
  for (const auto& g : *ts.ground_truth) out.push_back(g.shape);
  return out;
}

std::vector<std::vector<bool>> visibility_masks(const TrackSet& ts) {
  std::vector<std::vector<bool>> out;
  for (const auto& fr : ts.frames) out.push_back(fr.visibility);
  return out;
}

namespace {

bool any_hidden(const TrackSet& ts) {
  for (const auto& fr : ts.frames)
    if (std::find(fr.visibility.begin(), fr.visibility.end(), false) != fr.visibility.end()) return true;
  return false;
}

EvalReport score(const TrackSet& ts, const std::vector<Mat>& estimates) {
  const auto gt = ground_truth_shapes(ts);
  if (any_hidden(ts)) {
    const auto vis = visibility_masks(ts);
    return normalized_3d_error(estimates, gt, &vis);
  }
  return normalized_3d_error(estimates, gt);
}

}  // namespace

EvalReport evaluate_model(const TrackSet& ts, const ModelParams& params) {
  if (ts.points != params.sizes.points) throw ShapeError("evaluate: track point count does not match model");
  EvalReport rep = score(ts, reconstruct(ts, params));
  rep.coherence = final_coherence(params);
  return rep;
}

Mat rigid_factorization(const TrackSet& ts) {
  const Eigen::Index frames = static_cast<Eigen::Index>(ts.size());
  const int p = ts.points;
  if (frames < 2) throw InsufficientData("rigid factorization needs at least two frames");
  // Measurement matrix: rows 2f and 2f+1 hold u and v of frame f.
  Eigen::MatrixXd meas(2 * frames, p);
  for (Eigen::Index f = 0; f < frames; ++f) meas.middleRows(2 * f, 2) = ts.frames[f].points.transpose();

  // Rank-3 truncation through the p x p Gram matrix.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(meas.transpose() * meas);
  const Eigen::MatrixXd basis = eig.eigenvectors().rightCols(3);  // p x 3
  const Eigen::MatrixXd motion = meas * basis;                    // 2F x 3, shape^T = basis^T

  // Metric upgrade: Q symmetric with m_u^T Q m_u = m_v^T Q m_v = 1, m_u^T Q m_v = 0.
  auto row = [](const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    Eigen::Matrix<double, 1, 6> r;
    r << a(0) * b(0), a(1) * b(1), a(2) * b(2), a(0) * b(1) + a(1) * b(0), a(0) * b(2) + a(2) * b(0),
        a(1) * b(2) + a(2) * b(1);
    return r;
  };
  Eigen::MatrixXd lhs(3 * frames, 6);
  Eigen::VectorXd rhs(3 * frames);
  for (Eigen::Index f = 0; f < frames; ++f) {
    const Eigen::Vector3d mu = motion.row(2 * f).transpose();
    const Eigen::Vector3d mv = motion.row(2 * f + 1).transpose();
    lhs.row(3 * f) = row(mu, mu);
    lhs.row(3 * f + 1) = row(mv, mv);
    lhs.row(3 * f + 2) = row(mu, mv);
    rhs.segment<3>(3 * f) << 1.0, 1.0, 0.0;
  }
  const Eigen::Matrix<double, 6, 1> q = lhs.colPivHouseholderQr().solve(rhs);
  Eigen::Matrix3d gram;
  gram << q(0), q(3), q(4), q(3), q(1), q(5), q(4), q(5), q(2);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> geig(gram);
  const double floor = 1e-9 * std::max(geig.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
  const Eigen::Vector3d lam = geig.eigenvalues().cwiseMax(floor);
  // Q = L L^T with L = V sqrt(lam); shape^T becomes L^{-1} basis^T.
  const Eigen::Matrix3d l_inv = lam.cwiseSqrt().cwiseInverse().asDiagonal() * geig.eigenvectors().transpose();
  Mat shape = (l_inv * basis.transpose()).transpose();
  return shape;
}

EvalReport evaluate_rigid_baseline(const TrackSet& ts) {
  const Mat shape = rigid_factorization(ts);
  return score(ts, std::vector<Mat>(ts.size(), shape));
}

std::vector<SweepPoint> noise_sweep(const TrackSet& dataset, const LayerSizes& sizes, const TrainConfig& cfg,
                                    std::vector<double> ratios, std::uint64_t noise_seed) {
  if (!dataset.has_ground_truth()) throw ShapeError("noise_sweep: dataset needs ground truth");
  std::sort(ratios.begin(), ratios.end());
  std::vector<SweepPoint> curve;
  for (double r : ratios) {
    SweepPoint pt{r, std::numeric_limits<double>::quiet_NaN(), {}};
    try {
      const TrackSet noisy = add_noise(dataset, r, noise_seed);
      const TrainResult run = train(noisy, sizes, cfg);
      const auto& best = select_checkpoint(run.records);
      pt.mean_error = evaluate_model(dataset, *best.params).mean_error;
    } catch (const Error& e) {
      pt.error = e.what();
    }
    curve.push_back(pt);
  }
  return curve;
}

double pearson(const std::vector<std::pair<double, double>>& xy, bool* defined) {
  const double n = static_cast<double>(xy.size());
  double mx = 0.0, my = 0.0;
  for (auto [x, y] : xy) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (auto [x, y] : xy) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
  }
  const bool ok = sxx > 0.0 && syy > 0.0;
  if (defined) *defined = ok;
  return ok ? sxy / std::sqrt(sxx * syy) : std::numeric_limits<double>::quiet_NaN();
}

CoherenceSeries coherence_error_series(const std::vector<CheckpointRecord>& records, const TrackSet& dataset) {
  if (records.size() < 3) throw InsufficientData("coherence series needs at least 3 checkpoints");
  CoherenceSeries out;
  for (const auto& rec : records) {
    const ModelParams params = rec.params ? *rec.params : load_checkpoint(rec.path).params;
    out.points.emplace_back(rec.coherence, evaluate_model(dataset, params).mean_error);
  }
  bool defined = false;
  const double r = pearson(out.points, &defined);
  if (defined) out.correlation = r;
  return out;
}

}  // namespace nrsfm
