#include "nrsfm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "nrsfm/errors.hpp"

namespace nrsfm {

void SynthConfig::validate() const {
  sizes.validate();
  if (frame_count < 0) throw ConfigError("synth: frame count must be >= 0");
  if (sparsity < 1 || sparsity > sizes.last()) throw ConfigError("synth: need 1 <= K <= k_n");
  if (!(code_scale > 0.0)) throw ConfigError("synth: code scale must be positive");
}

SyntheticData generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const int p = cfg.sizes.points;
  const int n = cfg.sizes.layers();
  const int kn = cfg.sizes.last();

  SyntheticData out;
  std::mt19937_64 rng(cfg.dict_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // D1 is dense and signed. Deeper dictionaries have nonnegative columns with
  // max(1, k_{i-1}/k_i) nonzeros each, so every intermediate code
  // psi_{i-1} = D_i psi_i is itself sparse and nonnegative.
  for (int i = 0; i < n; ++i) {
    const int rows = i == 0 ? 3 * p : cfg.sizes.k[i - 1];
    const int cols = cfg.sizes.k[i];
    Mat d = Mat::Zero(rows, cols);
    if (i == 0) {
      for (Eigen::Index e = 0; e < d.size(); ++e) d.data()[e] = normal(rng);
    } else {
      const int support = std::max(1, rows / cols);
      std::vector<int> idx(rows);
      for (int j = 0; j < cols; ++j) {
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (int s = 0; s < support; ++s) d(idx[s], j) = std::abs(normal(rng));
      }
    }
    d.array().rowwise() /= d.colwise().norm().array();
    out.dictionaries.push_back(std::move(d));
  }

  Mat composed = out.dictionaries[0];
  for (int i = 1; i < n; ++i) composed = composed * out.dictionaries[i];

  TrackSet& ts = out.tracks;
  ts.points = p;
  ts.frames.resize(cfg.frame_count);
  ts.ground_truth.emplace(cfg.frame_count);
  out.codes.resize(cfg.frame_count);

  std::vector<int> atoms(kn);
  for (int f = 0; f < cfg.frame_count; ++f) {
    std::mt19937_64 code_rng(derive_seed(cfg.camera_seed, static_cast<std::uint64_t>(f), 1));
    std::iota(atoms.begin(), atoms.end(), 0);
    std::shuffle(atoms.begin(), atoms.end(), code_rng);
    Vec psi = Vec::Zero(kn);
    std::normal_distribution<double> code_normal(0.0, 1.0);
    for (int a = 0; a < cfg.sparsity; ++a) psi(atoms[a]) = std::abs(code_normal(code_rng)) * cfg.code_scale;

    const Vec s = composed * psi;
    Mat shape = Eigen::Map<const Mat>(s.data(), p, 3);
    Mat cam = random_orthonormal_camera(derive_seed(cfg.camera_seed, static_cast<std::uint64_t>(f), 2));

    ts.frames[f].points = shape * cam;
    ts.frames[f].visibility.assign(p, true);
    (*ts.ground_truth)[f] = GroundTruthFrame{std::move(shape), std::move(cam)};
    out.codes[f] = std::move(psi);
  }
  return out;
}

namespace {

Eigen::RowVectorXd visible_centroid(const Mat& m, const std::vector<bool>& vis) {
  Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(m.cols());
  int count = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (vis[i]) {
      c += m.row(i);
      ++count;
    }
  }
  return c / count;
}

}  // namespace

TrackSet center_frames(const TrackSet& ts) {
  TrackSet out = ts;
  for (std::size_t f = 0; f < out.frames.size(); ++f) {
    TrackFrame& fr = out.frames[f];
    const auto visible = std::count(fr.visibility.begin(), fr.visibility.end(), true);
    if (visible < 3) {
      throw InsufficientObservations(
          "center_frames: frame " + std::to_string(f) + " has fewer than 3 visible points", f);
    }
    const Eigen::RowVectorXd c = visible_centroid(fr.points, fr.visibility);
    for (Eigen::Index i = 0; i < fr.points.rows(); ++i)
      if (fr.visibility[i]) fr.points.row(i) -= c;
    if (out.ground_truth) {
      Mat& s = (*out.ground_truth)[f].shape;
      const Eigen::RowVectorXd cs = visible_centroid(s, fr.visibility);
      s.rowwise() -= cs;
    }
  }
  return out;
}

TrackSet add_noise(const TrackSet& ts, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0)) throw ConfigError("add_noise: ratio must be >= 0");
  TrackSet out = ts;
  if (ratio == 0.0) return out;
  for (std::size_t f = 0; f < out.frames.size(); ++f) {
    TrackFrame& fr = out.frames[f];
    std::mt19937_64 rng(derive_seed(seed, f));
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat noise = Mat::Zero(fr.points.rows(), 2);
    double w_norm_sq = 0.0;
    for (Eigen::Index i = 0; i < noise.rows(); ++i) {
      if (!fr.visibility[i]) continue;
      noise(i, 0) = normal(rng);
      noise(i, 1) = normal(rng);
      w_norm_sq += fr.points.row(i).squaredNorm();
    }
    const double nn = noise.norm();
    if (nn == 0.0 || w_norm_sq == 0.0) continue;
    noise *= ratio * std::sqrt(w_norm_sq) / nn;
    for (Eigen::Index i = 0; i < noise.rows(); ++i)
      if (fr.visibility[i]) fr.points.row(i) += noise.row(i);
  }
  return out;
}

std::vector<double> noise_ratios(const TrackSet& clean, const TrackSet& noisy) {
  if (clean.size() != noisy.size()) throw ShapeError("noise_ratios: frame count mismatch");
  std::vector<double> r;
  for (std::size_t f = 0; f < clean.size(); ++f) {
    double num = 0.0, den = 0.0;
    const auto& a = clean.frames[f];
    const auto& b = noisy.frames[f];
    for (Eigen::Index i = 0; i < a.points.rows(); ++i) {
      if (!a.visibility[i]) continue;
      num += (b.points.row(i) - a.points.row(i)).squaredNorm();
      den += a.points.row(i).squaredNorm();
    }
    r.push_back(std::sqrt(num / den));
  }
  return r;
}

ZeroFilled zero_fill_missing(const TrackSet& ts) {
  ZeroFilled out{ts, {}};
  for (std::size_t f = 0; f < out.tracks.frames.size(); ++f) {
    TrackFrame& fr = out.tracks.frames[f];
    bool any = false;
    for (Eigen::Index i = 0; i < fr.points.rows(); ++i) {
      if (fr.visibility[i]) {
        any = true;
      } else {
        fr.points.row(i).setZero();
      }
    }
    if (!any) out.empty_frames.push_back(f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Track file I/O

namespace {

constexpr std::string_view kMagic = "NRSFM-TRACKS";

void write_reals(std::ostream& os, const double* v, std::size_t n) {
  char buf[64];
  for (std::size_t i = 0; i < n; ++i) {
    auto res = std::to_chars(buf, buf + sizeof(buf), v[i], std::chars_format::general, 17);
    if (i) os.put(' ');
    os.write(buf, res.ptr - buf);
  }
  os.put('\n');
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

double parse_real(std::string_view tok, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    throw ParseError("non-numeric token '" + std::string(tok) + "'", line);
  }
  return v;
}

long parse_int(std::string_view tok, std::size_t line) {
  long v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    throw ParseError("bad integer '" + std::string(tok) + "'", line);
  }
  return v;
}

long header_field(std::string_view tok, std::string_view key) {
  if (tok.substr(0, key.size()) != key) throw ParseError("malformed header, expected " + std::string(key), 1);
  return parse_int(tok.substr(key.size()), 1);
}

class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}
  std::vector<std::string_view> next(const char* what) {
    if (!std::getline(is_, buf_)) throw ParseError(std::string("unexpected end of file, expected ") + what, line_ + 1);
    ++line_;
    return split(buf_);
  }
  std::size_t line() const { return line_; }
  bool at_end() {
    while (is_.peek() != std::char_traits<char>::eof()) {
      std::string rest;
      std::getline(is_, rest);
      ++line_;
      if (!split(rest).empty()) return false;
    }
    return true;
  }

 private:
  std::istream& is_;
  std::string buf_;
  std::size_t line_ = 0;
};

Mat read_matrix(LineReader& in, Eigen::Index rows, Eigen::Index cols, const char* what) {
  auto toks = in.next(what);
  if (static_cast<Eigen::Index>(toks.size()) != rows * cols) {
    throw ParseError(std::string(what) + ": expected " + std::to_string(rows * cols) + " values, got " +
                         std::to_string(toks.size()),
                     in.line());
  }
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = parse_real(toks[i], in.line());
  return m;
}

}  // namespace

void save_tracks(const TrackSet& ts, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("save_tracks: cannot open " + path.string());
  const bool gt = ts.has_ground_truth();
  os << kMagic << " v1 p=" << ts.points << " frames=" << ts.size() << " gt=" << (gt ? 1 : 0) << '\n';
  for (std::size_t f = 0; f < ts.size(); ++f) {
    const TrackFrame& fr = ts.frames[f];
    if (fr.points.rows() != ts.points || fr.points.cols() != 2) {
      throw ShapeError("save_tracks: frame " + std::to_string(f) + " has wrong point count");
    }
    write_reals(os, fr.points.data(), static_cast<std::size_t>(fr.points.size()));
    for (int i = 0; i < ts.points; ++i) {
      if (i) os.put(' ');
      os.put(fr.visibility[i] ? '1' : '0');
    }
    os.put('\n');
    if (gt) {
      const auto& g = (*ts.ground_truth)[f];
      write_reals(os, g.shape.data(), static_cast<std::size_t>(g.shape.size()));
      write_reals(os, g.camera.data(), static_cast<std::size_t>(g.camera.size()));
    }
  }
  if (!os) throw Error("save_tracks: write failed for " + path.string());
}

TrackSet load_tracks(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("load_tracks: cannot open " + path.string());
  LineReader in(is);
  auto head = in.next("header");
  if (head.size() != 5 || head[0] != kMagic || head[1] != "v1") {
    throw ParseError("malformed header", 1);
  }
  const long p = header_field(head[2], "p=");
  const long frames = header_field(head[3], "frames=");
  const long gt = header_field(head[4], "gt=");
  if (p < 1 || frames < 0 || (gt != 0 && gt != 1)) throw ParseError("malformed header values", 1);

  TrackSet ts;
  ts.points = static_cast<int>(p);
  ts.frames.resize(frames);
  if (gt) ts.ground_truth.emplace(frames);
  for (long f = 0; f < frames; ++f) {
    TrackFrame& fr = ts.frames[f];
    fr.points = read_matrix(in, p, 2, "2D points");
    auto bits = in.next("visibility");
    if (static_cast<long>(bits.size()) != p) {
      throw ParseError("visibility: expected " + std::to_string(p) + " flags, inconsistent p", in.line());
    }
    fr.visibility.resize(p);
    for (long i = 0; i < p; ++i) {
      if (bits[i] != "0" && bits[i] != "1") throw ParseError("visibility flags must be 0 or 1", in.line());
      fr.visibility[i] = bits[i] == "1";
    }
    for (long i = 0; i < p; ++i) {
      if (fr.visibility[i] && !fr.points.row(i).allFinite()) {
        throw ParseError("visible point " + std::to_string(i) + " is not finite", in.line() - 1);
      }
    }
    if (gt) {
      auto& g = (*ts.ground_truth)[f];
      g.shape = read_matrix(in, p, 3, "ground-truth shape");
      g.camera = read_matrix(in, 3, 2, "ground-truth camera");
      const double err = (g.camera.transpose() * g.camera - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff();
      if (!(err <= 1e-10)) throw ParseError("ground-truth camera is not orthonormal", in.line());
    }
  }
  if (!in.at_end()) throw ParseError("trailing data after last frame", in.line());
  return ts;
}

}  // namespace nrsfm
