#include <cmath>
#include <random>
#include <thread>
#include <utility>

#include "fd_check.hpp"
#include "gtest/gtest.h"
#include "nrsfm/errors.hpp"
#include "nrsfm/network.hpp"
#include "test_util.hpp"

namespace nrsfm {
namespace {

using testing_util::gaussian;
using testing_util::kron_identity3;

const LayerSizes kSmall{8, {16, 8, 4}};

Mat sharp_by_definition(const Mat& d1) {
  const Eigen::Index p = d1.rows() / 3, k = d1.cols();
  Mat out(p, 3 * k);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < k; ++j)
      for (int c = 0; c < 3; ++c) out(i, 3 * j + c) = d1(3 * i + c, j);
  return out;
}

// (psi (x) I3): 3k x 3.
Mat kron_code(const Vec& psi) {
  Mat out = Mat::Zero(3 * psi.size(), 3);
  for (Eigen::Index j = 0; j < psi.size(); ++j)
    for (int c = 0; c < 3; ++c) out(3 * j + c, c) = psi(j);
  return out;
}

Mat relu_minus_bias_blocks(const Mat& stacked, const Vec& b) {
  Mat out = stacked;
  for (Eigen::Index r = 0; r < out.rows(); ++r)
    for (Eigen::Index c = 0; c < 2; ++c) out(r, c) = std::max(out(r, c) - b(r / 3), 0.0);
  return out;
}

TEST(LayerSizes, Validation) {
  EXPECT_NO_THROW((LayerSizes{15, {32, 8}}.validate()));
  EXPECT_THROW((LayerSizes{2, {4}}.validate()), ShapeError);
  EXPECT_THROW((LayerSizes{8, {}}.validate()), ShapeError);
  EXPECT_THROW((LayerSizes{8, {8, 8}}.validate()), ShapeError);
  EXPECT_THROW((LayerSizes{8, {4, 0}}.validate()), ShapeError);
}

TEST(InitParams, ShapeArithmetic) {
  const ModelParams p = init_params(LayerSizes{15, {32, 8}}, 3);
  EXPECT_EQ(p.d1_sharp().rows(), 15);
  EXPECT_EQ(p.d1_sharp().cols(), 96);
  EXPECT_EQ(p.dicts[1].rows(), 32);
  EXPECT_EQ(p.dicts[1].cols(), 8);
  EXPECT_NO_THROW(p.check_shapes());
}

TEST(InitParams, DeterministicPerSeed) {
  const ModelParams a = init_params(kSmall, 9), b = init_params(kSmall, 9), c = init_params(kSmall, 10);
  const auto av = a.arrays(), bv = b.arrays(), cv = c.arrays();
  bool differs = false;
  for (std::size_t i = 0; i < av.size(); ++i) {
    EXPECT_TRUE(std::equal(av[i].begin(), av[i].end(), bv[i].begin()));
    differs |= !std::equal(av[i].begin(), av[i].end(), cv[i].begin());
  }
  EXPECT_TRUE(differs);
}

TEST(InitParams, VarianceMatchesFanIn) {
  // D1 of a 3p x k1 model with 3p * k1 >= 1e5 entries.
  const ModelParams p = init_params(LayerSizes{300, {120, 10}}, 4);
  const Mat& d1 = p.dicts[0];
  ASSERT_GE(d1.size(), 100000);
  const double mean = d1.mean();
  const double var = (d1.array() - mean).square().mean();
  EXPECT_NEAR(var * d1.rows(), 1.0, 0.1);
  EXPECT_NEAR(mean, 0.0, 0.01);
  for (const auto& b : p.enc_bias) EXPECT_TRUE((b.array() == 0.01).all());
  EXPECT_TRUE((p.cam_weights.array() == 0.1).all());
}

TEST(CheckShapes, NamesTheOffendingLayer) {
  ModelParams p = init_params(kSmall, 1);
  p.dicts[2] = Mat::Zero(8, 5);
  try {
    p.check_shapes();
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos) << e.what();
  }
}

TEST(D1Sharp, MatchesIndexDefinitionAndKroneckerIdentity) {
  std::mt19937_64 rng(5);
  const ModelParams p = init_params(kSmall, 5);
  EXPECT_EQ(p.d1_sharp(), sharp_by_definition(p.dicts[0]));
  const Vec psi = gaussian(16, 1, rng).cwiseAbs();
  Mat reshaped(8, 3);
  const Vec s = p.dicts[0] * psi;
  for (int i = 0; i < 8; ++i)
    for (int c = 0; c < 3; ++c) reshaped(i, c) = s(3 * i + c);
  EXPECT_LT((p.d1_sharp() * kron_code(psi) - reshaped).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Encode, FirstLayerMatchesMaterializedProduct) {
  std::mt19937_64 rng(6);
  const ModelParams p = init_params(kSmall, 6);
  const Mat w = fd::random_centered_frame(8, rng);
  const auto psi = encode(w, p);
  ASSERT_EQ(psi.size(), 3u);
  const Mat expected = relu_minus_bias_blocks(sharp_by_definition(p.dicts[0]).transpose() * w, p.enc_bias[0]);
  EXPECT_LT((psi[0].stacked() - expected).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Encode, DeeperLayersMatchKroneckerForm) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 20; ++t) {
    const ModelParams p = init_params(kSmall, 100 + t);
    const Mat w = fd::random_centered_frame(8, rng);
    const auto psi = encode(w, p);
    for (std::size_t i = 1; i < psi.size(); ++i) {
      const Mat expected =
          relu_minus_bias_blocks(kron_identity3(p.dicts[i]).transpose() * psi[i - 1].stacked(), p.enc_bias[i]);
      EXPECT_LT((psi[i].stacked() - expected).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(RecoverHeads, Examples) {
  ModelParams p = init_params(kSmall, 8);
  BlockMatrix32 psi(4);
  EXPECT_EQ(recover_camera(psi, p), Mat::Zero(3, 2));

  psi.block(2) << 1, 2, 3, 4, 5, 6;
  p.cam_weights.setZero();
  p.cam_weights(2) = 0.5;
  Mat expected(3, 2);
  expected << 0.5, 1, 1.5, 2, 2.5, 3;
  EXPECT_EQ(recover_camera(psi, p), expected);

  // Block-major, row-major within block: entry 6*2 + 3 is block 2, row 1, column 1.
  p.code_weights.setZero();
  p.code_bias.setZero();
  p.code_weights(1, 6 * 2 + 3) = 1.0;
  const Vec code = recover_code(psi, p);
  EXPECT_EQ(code(1), 4.0);
  EXPECT_EQ(code.cwiseAbs().sum(), 4.0);
}

TEST(Decode, ZeroCodeAndLinearity) {
  const ModelParams p = init_params(kSmall, 9);
  const Decoded z = decode(Vec::Zero(4), p);
  EXPECT_EQ(z.shape, Mat::Zero(8, 3));

  const ModelParams single = init_params(LayerSizes{8, {5}}, 9);
  std::mt19937_64 rng(9);
  const Vec psi = gaussian(5, 1, rng).cwiseAbs();
  const Mat s1 = decode(psi, single).shape;
  const Mat s2 = decode(2.0 * psi, single).shape;
  EXPECT_LT((s2 - 2.0 * s1).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((s1 - single.d1_sharp() * kron_code(psi)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Forward, ZeroInputYieldsZeroShapeAndDegenerateCamera) {
  const ModelParams p = init_params(kSmall, 10);
  const auto psi = encode(Mat::Zero(8, 2), p);
  for (const auto& b : psi) EXPECT_EQ(b.data().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(recover_camera(psi.back(), p), Mat::Zero(3, 2));
  EXPECT_THROW(forward(Mat::Zero(8, 2), p), DegenerateCamera);
}

TEST(Forward, RandomInstanceInvariants) {
  std::mt19937_64 rng(11);
  int evaluated = 0;
  for (int t = 0; t < 50; ++t) {
    const ModelParams p = init_params(kSmall, 200 + t);
    const Mat w = fd::random_centered_frame(8, rng);
    ForwardTrace tr;
    try {
      tr = forward(w, p);
    } catch (const DegenerateCamera&) {
      continue;  // all k_n = 4 camera blocks can be switched off by the relus
    }
    ++evaluated;
    EXPECT_GT(tr.loss, 0.0);
    EXPECT_TRUE(std::isfinite(tr.loss));
    EXPECT_LT((tr.camera_proj.transpose() * tr.camera_proj - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(),
              1e-8);
    for (const auto& b : tr.psi_blocks) EXPECT_GE(b.data().minCoeff(), 0.0);
    for (const auto& c : tr.psi_codes) EXPECT_GE(c.minCoeff(), 0.0);
    EXPECT_NEAR(tr.loss, (w - tr.shape * tr.camera_proj).norm(), 1e-14);
  }
  EXPECT_GE(evaluated, 40);
}

// One-layer model whose output reproduces W exactly: the code head ignores its
// input (G = 0, g = -psi*), D1 has zero z-rows, and atom 0 alone forms both the
// shape and the camera, whose polar factor is [I2; 0].
struct ExactFit {
  ModelParams params;
  Mat w;
};

ExactFit exact_fit_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int p = 6, k = 4;
  ModelParams params = init_params(LayerSizes{p, {k}}, seed);
  Mat& d1 = params.dicts[0];
  for (int i = 0; i < p; ++i) d1.row(3 * i + 2).setZero();
  // Atom 0 gets orthogonal x and y profiles so the camera block is diagonal.
  Vec x = testing_util::gaussian_vec(p, rng), y = testing_util::gaussian_vec(p, rng);
  y -= (y.dot(x) / x.squaredNorm()) * x;
  for (int i = 0; i < p; ++i) {
    d1(3 * i, 0) = x(i);
    d1(3 * i + 1, 0) = y(i);
  }
  Vec psi = Vec::Zero(k);
  psi(0) = 3.0;
  params.code_weights.setZero();
  params.code_bias = -psi;
  params.cam_weights.setZero();
  params.cam_weights(0) = 1.0;
  ExactFit out{params, Mat(p, 2)};
  out.w.col(0) = psi(0) * x;
  out.w.col(1) = psi(0) * y;
  return out;
}

TEST(Forward, ExactFitHasZeroLossAndZeroGradient) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const ExactFit inst = exact_fit_instance(seed);
    const ForwardTrace tr = forward(inst.w, inst.params);
    EXPECT_LT(tr.loss, 1e-12);
    const Gradients g = backward(tr, inst.w, inst.params);
    for (const auto& a : g.arrays())
      for (double v : a) EXPECT_LT(std::abs(v), 1e-10);
  }
}

TEST(Backward, MatchesFiniteDifferencesOverSeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const fd::Instance inst = fd::random_instance(kSmall, seed);
    const fd::Report rep = fd::check(inst.w, inst.params);
    EXPECT_LT(rep.worst_relative, 1e-4) << "seed " << seed << " at " << rep.worst_name;
    EXPECT_GT(rep.checked, rep.skipped_kink);
  }
}

TEST(Backward, ScaleIsLinear) {
  std::mt19937_64 rng(13);
  const ModelParams p = init_params(kSmall, 13);
  const Mat w = fd::random_centered_frame(8, rng);
  const ForwardTrace tr = forward(w, p);
  const Gradients g = backward(tr, w, p);
  for (double kappa : {0.5, 3.0, -2.0}) {
    Gradients scaled = Gradients::zeros_like(p);
    backward_accumulate(tr, w, p, kappa, scaled);
    const auto a = g.arrays();
    const auto b = std::as_const(scaled).arrays();
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < a[i].size(); ++j) EXPECT_NEAR(b[i][j], kappa * a[i][j], 1e-14 * (1 + std::abs(a[i][j])));
  }
}

TEST(PolarBackward, GuardOnTinySingularValues) {
  SvdThin svd;
  svd.u = Mat::Identity(3, 2);
  svd.v = Mat::Identity(2, 2);
  svd.sigma = Vec::Constant(2, 1e-12);
  EXPECT_THROW(polar_backward(svd, Mat::Ones(3, 2)), GradientInstability);
}

TEST(Forward, DoesNotMutateInputsAndIsThreadSafe) {
  std::mt19937_64 rng(14);
  const ModelParams p = init_params(kSmall, 14);
  const ModelParams copy = p;
  const Mat w = fd::random_centered_frame(8, rng);
  const Mat w_copy = w;
  const ForwardTrace ref = forward(w, p);
  (void)backward(ref, w, p);
  EXPECT_EQ(w, w_copy);
  const auto a = p.arrays(), b = copy.arrays();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(std::equal(a[i].begin(), a[i].end(), b[i].begin()));

  std::vector<ForwardTrace> traces(4);
  {
    std::vector<std::jthread> pool;
    for (auto& t : traces)
      pool.emplace_back([&t, &w, &p] {
        for (int r = 0; r < 50; ++r) t = forward(w, p);
      });
  }
  for (const auto& t : traces) {
    EXPECT_EQ(t.loss, ref.loss);
    EXPECT_EQ(t.shape, ref.shape);
    EXPECT_EQ(t.camera_proj, ref.camera_proj);
  }
}

}  // namespace
}  // namespace nrsfm
