#include <cmath>
#include <fstream>
#include <random>

#include "gtest/gtest.h"
#include "nrsfm/data.hpp"
#include "nrsfm/errors.hpp"
#include "test_util.hpp"

namespace nrsfm {
namespace {

SynthConfig small_config(int frames = 50) {
  SynthConfig c;
  c.sizes = LayerSizes{10, {12, 6}};
  c.frame_count = frames;
  c.sparsity = 2;
  return c;
}

TrackSet random_tracks(int points, int frames, bool gt, std::mt19937_64& rng) {
  TrackSet ts;
  ts.points = points;
  std::bernoulli_distribution hidden(0.2);
  for (int f = 0; f < frames; ++f) {
    TrackFrame fr{testing_util::gaussian(points, 2, rng) * 1e3, std::vector<bool>(points)};
    for (int i = 0; i < points; ++i) fr.visibility[i] = !hidden(rng);
    ts.frames.push_back(fr);
  }
  if (gt) {
    ts.ground_truth.emplace();
    for (int f = 0; f < frames; ++f)
      ts.ground_truth->push_back({testing_util::gaussian(points, 3, rng), random_orthonormal_camera(rng())});
  }
  return ts;
}

void expect_same(const TrackSet& a, const TrackSet& b) {
  ASSERT_EQ(a.points, b.points);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t f = 0; f < a.size(); ++f) {
    EXPECT_EQ(a.frames[f].points, b.frames[f].points);
    EXPECT_EQ(a.frames[f].visibility, b.frames[f].visibility);
  }
  ASSERT_EQ(a.has_ground_truth(), b.has_ground_truth());
  if (a.has_ground_truth()) {
    for (std::size_t f = 0; f < a.size(); ++f) {
      EXPECT_EQ((*a.ground_truth)[f].shape, (*b.ground_truth)[f].shape);
      EXPECT_EQ((*a.ground_truth)[f].camera, (*b.ground_truth)[f].camera);
    }
  }
}

TEST(GenerateSynthetic, SingleAtomFramesAreMultiplesOfOneShape) {
  SynthConfig c;
  c.sizes = LayerSizes{6, {4, 1}};
  c.frame_count = 2;
  c.sparsity = 1;
  const auto data = generate_synthetic(c);
  const Mat& s0 = (*data.tracks.ground_truth)[0].shape;
  const Mat& s1 = (*data.tracks.ground_truth)[1].shape;
  const double scale = s1.norm() / s0.norm();
  EXPECT_LT((s1 - scale * s0).norm(), 1e-12 * s1.norm());
}

TEST(GenerateSynthetic, FrameInvariants) {
  const auto data = generate_synthetic(small_config(200));
  const TrackSet& ts = data.tracks;
  ASSERT_EQ(ts.size(), 200u);
  for (std::size_t f = 0; f < ts.size(); ++f) {
    const auto& g = (*ts.ground_truth)[f];
    EXPECT_LT((g.camera.transpose() * g.camera - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE(ts.frames[f].points.norm(), g.shape.norm() * (1 + 1e-14));
    EXPECT_LT((ts.frames[f].points - g.shape * g.camera).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ((data.codes[f].array() > 0).count(), 2);
    EXPECT_GE(data.codes[f].minCoeff(), 0.0);
  }
  for (const auto& d : data.dictionaries)
    for (Eigen::Index j = 0; j < d.cols(); ++j) EXPECT_NEAR(d.col(j).norm(), 1.0, 1e-14);
}

TEST(GenerateSynthetic, RoundTripThroughDecoder) {
  const auto data = generate_synthetic(small_config(100));
  ModelParams params(ParamArrays::zeros(small_config().sizes));
  params.dicts = data.dictionaries;
  for (std::size_t f = 0; f < data.codes.size(); ++f) {
    const Mat s = decode(data.codes[f], params).shape;
    EXPECT_LT((s - (*data.tracks.ground_truth)[f].shape).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(GenerateSynthetic, DeterministicAndSeedSensitive) {
  SynthConfig c = small_config(20);
  const auto a = generate_synthetic(c), b = generate_synthetic(c);
  expect_same(a.tracks, b.tracks);
  c.camera_seed = 99;
  const auto d = generate_synthetic(c);
  EXPECT_NE(a.tracks.frames[0].points, d.tracks.frames[0].points);
}

TEST(GenerateSynthetic, InPlaneRotationEquivariance) {
  const auto data = generate_synthetic(small_config(10));
  for (const auto& g : *data.tracks.ground_truth) {
    const double th = 0.7;
    Mat r(2, 2);
    r << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    EXPECT_LT((g.shape * (g.camera * r) - (g.shape * g.camera) * r).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SynthConfig, Validation) {
  SynthConfig c = small_config();
  c.sparsity = 7;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
  c = small_config();
  c.sizes.k = {4, 6};
  EXPECT_ANY_THROW(generate_synthetic(c));
}

TEST(CenterFrames, Examples) {
  TrackSet ts;
  ts.points = 4;
  Mat pts(4, 2);
  pts << 1, 2, -1, 0, 0, -2, 0, 0;
  ts.frames.push_back({pts, std::vector<bool>(4, true)});
  expect_same(center_frames(ts), ts);

  TrackSet shifted = ts;
  shifted.frames[0].points.rowwise() += Eigen::RowVector2d(3.5, -7.25);
  EXPECT_LT((center_frames(shifted).frames[0].points - pts).cwiseAbs().maxCoeff(), 1e-14);

  TrackSet half = ts;
  half.frames[0].visibility = {true, true, true, false};
  half.frames[0].points.row(3) << 100, 100;
  const TrackSet c = center_frames(half);
  Eigen::RowVector2d centroid = c.frames[0].points.topRows(3).colwise().sum();
  EXPECT_LT(centroid.cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(c.frames[0].points.row(3), Eigen::RowVector2d(100, 100));
}

TEST(CenterFrames, TooFewVisiblePoints) {
  TrackSet ts;
  ts.points = 4;
  ts.frames.push_back({Mat::Ones(4, 2), std::vector<bool>(4, true)});
  ts.frames.push_back({Mat::Ones(4, 2), {true, false, true, false}});
  try {
    center_frames(ts);
    FAIL();
  } catch (const InsufficientObservations& e) {
    EXPECT_EQ(e.frame(), 1u);
  }
}

TEST(CenterFrames, IdempotentAndKeepsProjectionConsistent) {
  const TrackSet ts = generate_synthetic(small_config(30)).tracks;
  const TrackSet once = center_frames(ts);
  const TrackSet twice = center_frames(once);
  for (std::size_t f = 0; f < ts.size(); ++f) {
    EXPECT_LT((once.frames[f].points - twice.frames[f].points).cwiseAbs().maxCoeff(), 1e-13);
    const auto& g = (*once.ground_truth)[f];
    EXPECT_LT((once.frames[f].points - g.shape * g.camera).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(AddNoise, Examples) {
  const TrackSet ts = center_frames(generate_synthetic(small_config(30)).tracks);
  expect_same(add_noise(ts, 0.0, 5), ts);
  const TrackSet a = add_noise(ts, 0.2, 5), b = add_noise(ts, 0.2, 6);
  for (double r : noise_ratios(ts, a)) EXPECT_NEAR(r, 0.2, 1e-10);
  for (double r : noise_ratios(ts, b)) EXPECT_NEAR(r, 0.2, 1e-10);
  EXPECT_NE(a.frames[0].points, b.frames[0].points);
  EXPECT_THROW(add_noise(ts, -0.1, 1), ConfigError);
}

TEST(AddNoise, RealizedRatioProperty) {
  std::mt19937_64 rng(3);
  const TrackSet ts = random_tracks(9, 40, false, rng);
  for (double ratio : {1e-6, 0.01, 0.1, 0.5, 2.0}) {
    const TrackSet noisy = add_noise(ts, ratio, 17);
    for (double r : noise_ratios(ts, noisy)) EXPECT_NEAR(r, ratio, 1e-10 * std::max(1.0, ratio));
    for (std::size_t f = 0; f < ts.size(); ++f)
      for (int i = 0; i < ts.points; ++i)
        if (!ts.frames[f].visibility[i]) EXPECT_EQ(noisy.frames[f].points.row(i), ts.frames[f].points.row(i));
  }
}

TEST(ZeroFillMissing, Examples) {
  const TrackSet full = center_frames(generate_synthetic(small_config(5)).tracks);
  const ZeroFilled same = zero_fill_missing(full);
  expect_same(same.tracks, full);
  EXPECT_TRUE(same.empty_frames.empty());

  TrackSet one = full;
  one.frames[2].visibility[4] = false;
  const ZeroFilled z = zero_fill_missing(one);
  EXPECT_EQ((z.tracks.frames[2].points.array() != one.frames[2].points.array()).count(), 2);
  EXPECT_EQ(z.tracks.frames[2].points.row(4), Eigen::RowVector2d::Zero());
  EXPECT_EQ(z.tracks.frames[2].visibility, one.frames[2].visibility);

  TrackSet none = full;
  none.frames[1].visibility.assign(none.points, false);
  const ZeroFilled e = zero_fill_missing(none);
  EXPECT_EQ(e.tracks.frames[1].points, Mat::Zero(none.points, 2));
  EXPECT_EQ(e.empty_frames, std::vector<std::size_t>{1});
}

TEST(TrackIo, EmptyAndSingleFrameFormat) {
  const auto dir = testing_util::scratch_dir("data_io");
  TrackSet empty;
  empty.points = 3;
  save_tracks(empty, dir / "empty.txt");
  {
    std::ifstream is(dir / "empty.txt");
    std::string all((std::istreambuf_iterator<char>(is)), {});
    EXPECT_EQ(all, "NRSFM-TRACKS v1 p=3 frames=0 gt=0\n");
  }
  expect_same(load_tracks(dir / "empty.txt"), empty);

  TrackSet one;
  one.points = 2;
  Mat pts(2, 2);
  pts << 0.5, -1, 2, 3;
  one.frames.push_back({pts, {true, false}});
  save_tracks(one, dir / "one.txt");
  std::ifstream is(dir / "one.txt");
  std::string header, data, mask, extra;
  std::getline(is, header);
  std::getline(is, data);
  std::getline(is, mask);
  EXPECT_EQ(data, "0.5 -1 2 3");
  EXPECT_EQ(mask, "1 0");
  EXPECT_FALSE(std::getline(is, extra));
}

TEST(TrackIo, RandomRoundTripIsBitExact) {
  const auto dir = testing_util::scratch_dir("data_roundtrip");
  std::mt19937_64 rng(21);
  for (int t = 0; t < 10; ++t) {
    const TrackSet ts = random_tracks(7, 15, t % 2 == 0, rng);
    save_tracks(ts, dir / "t.txt");
    expect_same(load_tracks(dir / "t.txt"), ts);
  }
}

std::size_t parse_error_line(const std::filesystem::path& path, const std::string& text) {
  {
    std::ofstream os(path);
    os << text;
  }
  try {
    load_tracks(path);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

TEST(TrackIo, ParseErrorsCarryLineNumbers) {
  const auto dir = testing_util::scratch_dir("data_parse");
  const auto f = dir / "bad.txt";
  EXPECT_EQ(parse_error_line(f, "NRSFM-TRACKS v2 p=2 frames=1 gt=0\n"), 1u);
  EXPECT_EQ(parse_error_line(f, "NRSFM-TRACKS v1 p=2 frames=1 gt=0\n1 2 x 4\n1 1\n"), 2u);
  EXPECT_EQ(parse_error_line(f, "NRSFM-TRACKS v1 p=2 frames=1 gt=0\n1 2 3\n1 1\n"), 2u);
  EXPECT_EQ(parse_error_line(f, "NRSFM-TRACKS v1 p=2 frames=1 gt=0\n1 2 3 4\n1 1 1\n"), 3u);
  EXPECT_EQ(parse_error_line(f, "NRSFM-TRACKS v1 p=2 frames=2 gt=0\n1 2 3 4\n1 1\n"), 4u);
  EXPECT_EQ(parse_error_line(f, "NRSFM-TRACKS v1 p=2 frames=1 gt=0\n1 2 3 4\n1 1\n5\n"), 4u);
  EXPECT_EQ(parse_error_line(f, "NRSFM-TRACKS v1 p=1 frames=1 gt=1\n1 2\n1\n1 2 3\n2 0 0 1 0 0\n"), 5u);
}

}  // namespace
}  // namespace nrsfm
