#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nrsfm/numerics.hpp"
#include "nrsfm/sparse.hpp"

namespace nrsfm {

// Point count and the code sizes k_1 > k_2 > ... > k_n of the hierarchy.
struct LayerSizes {
  int points = 0;
  std::vector<int> k;

  int layers() const { return static_cast<int>(k.size()); }
  int last() const { return k.back(); }
  // Throws ShapeError unless p >= 3, n >= 1 and k is a strictly decreasing funnel.
  void validate() const;

  bool operator==(const LayerSizes&) const = default;
};

// Every trainable array of the model. Shared by ModelParams and Gradients so
// the optimizer, serializer and finite-difference checks can walk them
// uniformly in declared order.
struct ParamArrays {
  LayerSizes sizes;
  // dicts[0] is D1 (3p x k1, rows ordered point-major: x1 y1 z1 x2 ...);
  // dicts[i] is D_{i+1} (k_i x k_{i+1}). Shared by encoder and decoder.
  std::vector<Mat> dicts;
  // Encoder thresholds b_1..b_n, enc_bias[i] has length k[i].
  std::vector<Vec> enc_bias;
  // Decoder thresholds b'_2..b'_n, dec_bias[i] has length k[i] and produces
  // code i (0-based) from code i + 1.
  std::vector<Vec> dec_bias;
  // Camera head: M = sum_j cam_weights(j) * Psi_n block j.
  Vec cam_weights;
  // Code head: psi_n = relu(code_weights * vec(Psi_n) - code_bias).
  Mat code_weights;
  Vec code_bias;

  static ParamArrays zeros(const LayerSizes& sizes);

  // Mutable/const views over each array in declared order.
  std::vector<std::span<double>> arrays();
  std::vector<std::span<const double>> arrays() const;
  std::vector<std::string> array_names() const;
  std::size_t scalar_count() const;

  // p x 3k1 reshape of D1 such that S = D1# (psi_1 (x) I3).
  Mat d1_sharp() const;

  // Throws ShapeError naming the first inconsistent array.
  void check_shapes() const;
};

struct ModelParams : ParamArrays {
  ModelParams() = default;
  explicit ModelParams(ParamArrays a) : ParamArrays(std::move(a)) {}
};

struct Gradients : ParamArrays {
  Gradients() = default;
  explicit Gradients(ParamArrays a) : ParamArrays(std::move(a)) {}
  static Gradients zeros_like(const ParamArrays& p) { return Gradients(ParamArrays::zeros(p.sizes)); }
  void add_scaled(const Gradients& other, double scale);
  bool all_finite() const;
};

struct ForwardTrace {
  std::vector<BlockMatrix32> psi_blocks;  // Psi_1 .. Psi_n
  std::vector<Vec> psi_codes;             // psi_1 .. psi_n (index i holds psi_{i+1})
  Mat camera_raw;                         // M, 3x2
  Mat camera_proj;                        // polar factor of M
  SvdThin camera_svd;
  Mat shape;     // S, p x 3
  Mat residual;  // W - S * camera_proj
  double loss = 0.0;
};

// Gaussian dictionaries scaled by 1/sqrt(fan_in), biases 0.01, camera weights
// 1/k_n. Bit-identical for a given seed.
ModelParams init_params(const LayerSizes& sizes, std::uint64_t seed);

std::vector<BlockMatrix32> encode(const Mat& w, const ModelParams& params);
Mat recover_camera(const BlockMatrix32& psi_n, const ModelParams& params);
Vec recover_code(const BlockMatrix32& psi_n, const ModelParams& params);

struct Decoded {
  std::vector<Vec> codes;  // psi_1 .. psi_n
  Mat shape;               // p x 3
};
Decoded decode(const Vec& psi_n, const ModelParams& params);

// Full pass: encode, recover heads, decode, project camera, reprojection loss.
// Throws DegenerateCamera when the recovered camera is rank deficient.
ForwardTrace forward(const Mat& w, const ModelParams& params);

// Reverse-mode gradient of trace.loss w.r.t. every parameter.
// Throws GradientInstability when sigma_1 + sigma_2 of the camera < 1e-10.
Gradients backward(const ForwardTrace& trace, const Mat& w, const ModelParams& params);

// As backward, adding scale * gradient into `grads`.
void backward_accumulate(const ForwardTrace& trace, const Mat& w, const ModelParams& params,
                         double scale, Gradients& grads);

// Adjoint of the polar factor: maps dL/dQ (Q = U V^T) to dL/dM.
Mat polar_backward(const SvdThin& svd, const Mat& grad_proj);

inline constexpr double kPolarGradientGuard = 1e-10;
// backward() returns a zero gradient when loss <= kExactFitTolerance * |W|_F.
inline constexpr double kExactFitTolerance = 1e-12;

}  // namespace nrsfm
