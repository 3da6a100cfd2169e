#include "nrsfm/network.hpp"

#include <cmath>
#include <random>

#include "nrsfm/errors.hpp"

namespace nrsfm {
namespace {

using Strided = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;
using StridedMut = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;

// Rows {3i + c} of D1, i.e. the p x k1 slice of D1 that produces coordinate c.
Strided d1_coord(const Mat& d1, int c, int p) {
  return Strided(d1.data() + c * d1.cols(), p, d1.cols(), Eigen::OuterStride<>(3 * d1.cols()));
}
StridedMut d1_coord(Mat& d1, int c, int p) {
  return StridedMut(d1.data() + c * d1.cols(), p, d1.cols(), Eigen::OuterStride<>(3 * d1.cols()));
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

Vec relu_vec(const Vec& v) { return v.cwiseMax(0.0); }

}  // namespace

void LayerSizes::validate() const {
  require(points >= 3, "layer sizes: need at least 3 points");
  require(!k.empty(), "layer sizes: need at least one layer");
  for (std::size_t i = 0; i < k.size(); ++i) {
    require(k[i] >= 1, "layer sizes: k[" + std::to_string(i) + "] must be >= 1");
    if (i > 0) {
      require(k[i] < k[i - 1], "layer sizes: k must be strictly decreasing (layer " +
                                   std::to_string(i + 1) + ")");
    }
  }
}

ParamArrays ParamArrays::zeros(const LayerSizes& sizes) {
  sizes.validate();
  ParamArrays a;
  a.sizes = sizes;
  const int n = sizes.layers();
  a.dicts.push_back(Mat::Zero(3 * sizes.points, sizes.k[0]));
  for (int i = 1; i < n; ++i) a.dicts.push_back(Mat::Zero(sizes.k[i - 1], sizes.k[i]));
  for (int i = 0; i < n; ++i) a.enc_bias.push_back(Vec::Zero(sizes.k[i]));
  for (int i = 0; i + 1 < n; ++i) a.dec_bias.push_back(Vec::Zero(sizes.k[i]));
  a.cam_weights = Vec::Zero(sizes.last());
  a.code_weights = Mat::Zero(sizes.last(), 6 * sizes.last());
  a.code_bias = Vec::Zero(sizes.last());
  return a;
}

std::vector<std::span<double>> ParamArrays::arrays() {
  std::vector<std::span<double>> out;
  auto add = [&](auto& m) { out.emplace_back(m.data(), static_cast<std::size_t>(m.size())); };
  for (auto& d : dicts) add(d);
  for (auto& b : enc_bias) add(b);
  for (auto& b : dec_bias) add(b);
  add(cam_weights);
  add(code_weights);
  add(code_bias);
  return out;
}

std::vector<std::span<const double>> ParamArrays::arrays() const {
  std::vector<std::span<const double>> out;
  for (auto s : const_cast<ParamArrays*>(this)->arrays()) out.emplace_back(s.data(), s.size());
  return out;
}

std::vector<std::string> ParamArrays::array_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < dicts.size(); ++i) names.push_back("D" + std::to_string(i + 1));
  for (std::size_t i = 0; i < enc_bias.size(); ++i) names.push_back("b" + std::to_string(i + 1));
  for (std::size_t i = 0; i < dec_bias.size(); ++i) names.push_back("b'" + std::to_string(i + 2));
  names.insert(names.end(), {"cam_weights", "code_weights", "code_bias"});
  return names;
}

std::size_t ParamArrays::scalar_count() const {
  std::size_t n = 0;
  for (auto s : arrays()) n += s.size();
  return n;
}

Mat ParamArrays::d1_sharp() const {
  const int p = sizes.points;
  const Eigen::Index k1 = dicts[0].cols();
  Mat sharp(p, 3 * k1);
  for (int i = 0; i < p; ++i)
    for (int c = 0; c < 3; ++c)
      for (Eigen::Index j = 0; j < k1; ++j) sharp(i, 3 * j + c) = dicts[0](3 * i + c, j);
  return sharp;
}

void ParamArrays::check_shapes() const {
  sizes.validate();
  const int n = sizes.layers();
  const int p = sizes.points;
  require(static_cast<int>(dicts.size()) == n, "params: expected one dictionary per layer");
  require(dicts[0].rows() == 3 * p && dicts[0].cols() == sizes.k[0],
          "params: layer 1 dictionary must be 3p x k1");
  for (int i = 1; i < n; ++i) {
    require(dicts[i].rows() == sizes.k[i - 1] && dicts[i].cols() == sizes.k[i],
            "params: layer " + std::to_string(i + 1) + " dictionary must be k" + std::to_string(i) +
                " x k" + std::to_string(i + 1));
  }
  require(static_cast<int>(enc_bias.size()) == n, "params: expected one encoder bias per layer");
  for (int i = 0; i < n; ++i) {
    require(enc_bias[i].size() == sizes.k[i],
            "params: layer " + std::to_string(i + 1) + " encoder bias length");
  }
  require(static_cast<int>(dec_bias.size()) == n - 1, "params: expected n-1 decoder biases");
  for (int i = 0; i + 1 < n; ++i) {
    require(dec_bias[i].size() == sizes.k[i],
            "params: layer " + std::to_string(i + 2) + " decoder bias length");
  }
  const int kn = sizes.last();
  require(cam_weights.size() == kn, "params: camera weights length must be k_n");
  require(code_weights.rows() == kn && code_weights.cols() == 6 * kn,
          "params: code weights must be k_n x 6k_n");
  require(code_bias.size() == kn, "params: code bias length must be k_n");
}

void Gradients::add_scaled(const Gradients& other, double scale) {
  auto dst = arrays();
  auto src = other.arrays();
  require(dst.size() == src.size(), "gradients: structure mismatch");
  for (std::size_t a = 0; a < dst.size(); ++a) {
    require(dst[a].size() == src[a].size(), "gradients: array size mismatch");
    for (std::size_t i = 0; i < dst[a].size(); ++i) dst[a][i] += scale * src[a][i];
  }
}

bool Gradients::all_finite() const {
  for (auto s : arrays())
    for (double v : s)
      if (!std::isfinite(v)) return false;
  return true;
}

ModelParams init_params(const LayerSizes& sizes, std::uint64_t seed) {
  ModelParams params(ParamArrays::zeros(sizes));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](Mat& m, double fan_in) {
    const double scale = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal(rng);
  };
  for (auto& d : params.dicts) fill(d, static_cast<double>(d.rows()));
  fill(params.code_weights, static_cast<double>(params.code_weights.cols()));
  for (auto& b : params.enc_bias) b.setConstant(0.01);
  for (auto& b : params.dec_bias) b.setConstant(0.01);
  params.code_bias.setConstant(0.01);
  params.cam_weights.setConstant(1.0 / sizes.last());
  return params;
}

std::vector<BlockMatrix32> encode(const Mat& w, const ModelParams& params) {
  params.check_shapes();
  const int p = params.sizes.points;
  if (w.rows() != p || w.cols() != 2) {
    throw ShapeError("encode: layer 1 expects W of size " + std::to_string(p) + "x2");
  }
  const int n = params.sizes.layers();
  std::vector<BlockMatrix32> psi;
  psi.reserve(n);

  // Layer 1: (D1#)^T W as a transposed 1x1 convolution over the 3 coordinates.
  const Mat& d1 = params.dicts[0];
  Mat pre(d1.cols(), 6);
  for (int c = 0; c < 3; ++c) pre.middleCols(2 * c, 2).noalias() = d1_coord(d1, c, p).transpose() * w;
  pre.colwise() -= params.enc_bias[0];
  psi.emplace_back(Mat(pre.cwiseMax(0.0)));

  // Layers 2..n: (D (x) I3)^T Psi is D^T applied channel-wise.
  for (int i = 1; i < n; ++i) {
    Mat next = params.dicts[i].transpose() * psi.back().data();
    next.colwise() -= params.enc_bias[i];
    psi.emplace_back(Mat(next.cwiseMax(0.0)));
  }
  return psi;
}

Mat recover_camera(const BlockMatrix32& psi_n, const ModelParams& params) {
  if (psi_n.block_count() != params.cam_weights.size()) {
    throw ShapeError("recover_camera: block count must equal k_n");
  }
  Eigen::RowVectorXd flat = params.cam_weights.transpose() * psi_n.data();
  return Eigen::Map<const Mat>(flat.data(), 3, 2);
}

Vec recover_code(const BlockMatrix32& psi_n, const ModelParams& params) {
  if (psi_n.block_count() != params.code_bias.size()) {
    throw ShapeError("recover_code: block count must equal k_n");
  }
  // Row-major L x 6 storage is the block-major, row-major-within-block vec.
  const Eigen::Map<const Vec> v(psi_n.data().data(), psi_n.data().size());
  return relu_vec(params.code_weights * v - params.code_bias);
}

Decoded decode(const Vec& psi_n, const ModelParams& params) {
  params.check_shapes();
  const int n = params.sizes.layers();
  if (psi_n.size() != params.sizes.last()) throw ShapeError("decode: code length must equal k_n");
  Decoded out;
  out.codes.resize(n);
  out.codes[n - 1] = psi_n;
  for (int i = n - 1; i >= 1; --i) {
    out.codes[i - 1] = relu_vec(params.dicts[i] * out.codes[i] - params.dec_bias[i - 1]);
  }
  const Vec s = params.dicts[0] * out.codes[0];
  out.shape = Eigen::Map<const Mat>(s.data(), params.sizes.points, 3);
  return out;
}

ForwardTrace forward(const Mat& w, const ModelParams& params) {
  ForwardTrace t;
  t.psi_blocks = encode(w, params);
  const BlockMatrix32& last = t.psi_blocks.back();
  t.camera_raw = recover_camera(last, params);
  Decoded dec = decode(recover_code(last, params), params);
  t.psi_codes = std::move(dec.codes);
  t.shape = std::move(dec.shape);
  t.camera_proj = polar_project(t.camera_raw, t.camera_svd);
  t.residual = w - t.shape * t.camera_proj;
  t.loss = t.residual.norm();
  return t;
}

Mat polar_backward(const SvdThin& svd, const Mat& grad_proj) {
  const double s0 = svd.sigma(0);
  const double s1 = svd.sigma(1);
  if (s0 + s1 < kPolarGradientGuard) {
    throw GradientInstability("polar gradient: sigma_1 + sigma_2 below guard");
  }
  const Mat& u = svd.u;
  const Mat& v = svd.v;
  const Eigen::Matrix2d g_hat = u.transpose() * grad_proj * v;
  const double x = (g_hat(0, 1) - g_hat(1, 0)) / (s0 + s1);
  Eigen::Matrix2d skew;
  skew << 0.0, x, -x, 0.0;
  const Eigen::Matrix3d out_of_span = Eigen::Matrix3d::Identity() - u * u.transpose();
  const Eigen::Vector2d inv_sigma(1.0 / s0, 1.0 / s1);
  Mat grad = u * skew * v.transpose() +
             out_of_span * grad_proj * v * inv_sigma.asDiagonal() * v.transpose();
  return grad;
}

void backward_accumulate(const ForwardTrace& t, const Mat& w, const ModelParams& params,
                         double scale, Gradients& g) {
  const int n = params.sizes.layers();
  const int p = params.sizes.points;
  // The unsquared norm has no gradient at 0; a residual at rounding level
  // relative to W counts as an exact fit and contributes nothing.
  if (t.loss <= kExactFitTolerance * w.norm()) return;

  // Loss = |R|_F, R = W - S Q.
  const Mat d_pred = -(scale / t.loss) * t.residual;  // dL/d(S Q)
  const Mat d_shape = d_pred * t.camera_proj.transpose();
  const Mat d_proj = t.shape.transpose() * d_pred;
  const Mat d_cam = polar_backward(t.camera_svd, d_proj);

  // Decoder: s = D1 psi_1, psi_{i-1} = relu(D_i psi_i - b'_i).
  const Eigen::Map<const Vec> ds(d_shape.data(), 3 * p);
  g.dicts[0].noalias() += ds * t.psi_codes[0].transpose();
  Vec d_code = params.dicts[0].transpose() * ds;
  for (int i = 1; i < n; ++i) {
    // d_code is dL/dpsi_i (0-based i-1); push through relu(D_{i} psi - b').
    const Vec& out = t.psi_codes[i - 1];
    Vec dz = d_code.cwiseProduct((out.array() > 0.0).cast<double>().matrix());
    g.dicts[i].noalias() += dz * t.psi_codes[i].transpose();
    g.dec_bias[i - 1] -= dz;
    d_code = params.dicts[i].transpose() * dz;
  }

  // Code head: psi_n = relu(G vec(Psi_n) - g).
  const BlockMatrix32& last = t.psi_blocks.back();
  const Eigen::Map<const Vec> v(last.data().data(), last.data().size());
  const Vec dy = d_code.cwiseProduct((t.psi_codes[n - 1].array() > 0.0).cast<double>().matrix());
  g.code_weights.noalias() += dy * v.transpose();
  g.code_bias -= dy;
  Vec dv = params.code_weights.transpose() * dy;
  Mat d_psi = Eigen::Map<const Mat>(dv.data(), last.block_count(), 6);

  // Camera head: M = sum_j c_j Psi_n,j.
  const Eigen::Map<const Eigen::RowVectorXd> dm(d_cam.data(), 6);
  g.cam_weights.noalias() += last.data() * dm.transpose();
  d_psi.noalias() += params.cam_weights * dm;

  // Encoder, top layer down.
  for (int i = n - 1; i >= 0; --i) {
    const Mat& out = t.psi_blocks[i].data();
    const Mat dy_layer = d_psi.cwiseProduct((out.array() > 0.0).cast<double>().matrix());
    g.enc_bias[i] -= dy_layer.rowwise().sum();
    if (i > 0) {
      const Mat& in = t.psi_blocks[i - 1].data();
      g.dicts[i].noalias() += in * dy_layer.transpose();
      d_psi = params.dicts[i] * dy_layer;
    } else {
      for (int c = 0; c < 3; ++c) {
        d1_coord(g.dicts[0], c, p).noalias() += w * dy_layer.middleCols(2 * c, 2).transpose();
      }
    }
  }
}

Gradients backward(const ForwardTrace& trace, const Mat& w, const ModelParams& params) {
  Gradients g = Gradients::zeros_like(params);
  backward_accumulate(trace, w, params, 1.0, g);
  return g;
}

}  // namespace nrsfm
