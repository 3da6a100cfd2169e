#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nrsfm/data.hpp"
#include "nrsfm/train.hpp"

namespace nrsfm {

struct EvalReport {
  std::vector<double> per_frame_errors;
  double mean_error = 0.0;
  bool aligned = true;
  double noise_ratio = 0.0;
  double coherence = 0.0;
};

// Orthogonal R (reflections allowed) minimizing |s_est R - s_gt|_F.
// Throws DegenerateAlignment if s_gt is zero.
Eigen::Matrix3d align_orthonormal(const Mat& s_est, const Mat& s_gt);

// Per frame |S_est R - S_gt|_F / |S_gt|_F after alignment, and their mean.
// With `visibility`, each frame is aligned and scored on its visible rows only.
EvalReport normalized_3d_error(const std::vector<Mat>& estimates, const std::vector<Mat>& ground_truth,
                               const std::vector<std::vector<bool>>* visibility = nullptr);

// Runs the network forward on every frame and returns the estimated shapes.
// Frames with a degenerate camera get a zero shape.
std::vector<Mat> reconstruct(const TrackSet& ts, const ModelParams& params);

std::vector<Mat> ground_truth_shapes(const TrackSet& ts);
std::vector<std::vector<bool>> visibility_masks(const TrackSet& ts);

// Evaluates a trained model on a track set with ground truth.
EvalReport evaluate_model(const TrackSet& ts, const ModelParams& params);

// Rigid orthographic factorization (rank-3 SVD + metric upgrade). Returns the
// single shape used as the estimate for every frame.
Mat rigid_factorization(const TrackSet& ts);
EvalReport evaluate_rigid_baseline(const TrackSet& ts);

struct SweepPoint {
  double ratio = 0.0;
  double mean_error = 0.0;
  std::string error;  // non-empty if training failed at this ratio
};

// Retrains from scratch at each noise ratio (ascending) and reports the error
// of the coherence-selected checkpoint. Training failures are recorded per
// ratio and the remaining ratios still run.
std::vector<SweepPoint> noise_sweep(const TrackSet& dataset, const LayerSizes& sizes,
                                    const TrainConfig& cfg, std::vector<double> ratios,
                                    std::uint64_t noise_seed);

struct CoherenceSeries {
  std::vector<std::pair<double, double>> points;  // (coherence, mean_error)
  std::optional<double> correlation;              // empty when either variance is zero
};

double pearson(const std::vector<std::pair<double, double>>& xy, bool* defined = nullptr);

// Evaluates every checkpoint against ground truth. Needs >= 3 records.
CoherenceSeries coherence_error_series(const std::vector<CheckpointRecord>& records,
                                       const TrackSet& dataset);

}  // namespace nrsfm
