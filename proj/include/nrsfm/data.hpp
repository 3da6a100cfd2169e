#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "nrsfm/network.hpp"
#include "nrsfm/numerics.hpp"

namespace nrsfm {

struct TrackFrame {
  Mat points;                   // p x 2 image coordinates
  std::vector<bool> visibility;  // one flag per point
};

struct GroundTruthFrame {
  Mat shape;   // p x 3
  Mat camera;  // 3 x 2, orthonormal columns
};

struct TrackSet {
  int points = 0;
  std::vector<TrackFrame> frames;
  std::optional<std::vector<GroundTruthFrame>> ground_truth;

  std::size_t size() const { return frames.size(); }
  bool has_ground_truth() const { return ground_truth.has_value(); }
};

struct SynthConfig {
  LayerSizes sizes;  // generator hierarchy, p and k_1..k_n
  int frame_count = 0;
  int sparsity = 1;  // active atoms in psi_n
  std::uint64_t dict_seed = 1;
  std::uint64_t camera_seed = 2;
  double code_scale = 1.0;

  void validate() const;
};

// Generator output: the track set plus the hierarchy that produced it.
struct SyntheticData {
  TrackSet tracks;
  std::vector<Mat> dictionaries;     // D_1 .. D_n
  std::vector<Vec> codes;            // psi_n per frame
};

SyntheticData generate_synthetic(const SynthConfig& cfg);

// Removes each frame's translation using the centroid of its visible points.
// Ground-truth shapes, when present, are shifted by their own visible-point
// centroid so W = S M still holds. Throws InsufficientObservations for frames
// with fewer than 3 visible points.
TrackSet center_frames(const TrackSet& ts);

// Adds Gaussian noise to visible coordinates, rescaled per frame so that
// |noise|_F / |W|_F equals `ratio`.
TrackSet add_noise(const TrackSet& ts, double ratio, std::uint64_t seed);

struct ZeroFilled {
  TrackSet tracks;
  std::vector<std::size_t> empty_frames;  // frames with no visible point
};
ZeroFilled zero_fill_missing(const TrackSet& ts);

// Measured |noise|_F / |W|_F per frame over visible points.
std::vector<double> noise_ratios(const TrackSet& clean, const TrackSet& noisy);

void save_tracks(const TrackSet& ts, const std::filesystem::path& path);
TrackSet load_tracks(const std::filesystem::path& path);

}  // namespace nrsfm
