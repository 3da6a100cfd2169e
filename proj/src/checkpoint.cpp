#include "nrsfm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "nrsfm/errors.hpp"

namespace nrsfm {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

constexpr char kMagic[8] = {'N', 'R', 'S', 'F', 'M', 'C', 'K', 'P'};

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <class T>
  T get() {
    if (pos_ + sizeof(T) > s_.size()) throw Error("checkpoint: truncated file");
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const auto& sz = ckpt.params.sizes;
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sz.points));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sz.layers()));
  for (int k : sz.k) put<std::uint32_t>(out, static_cast<std::uint32_t>(k));
  put<std::uint64_t>(out, ckpt.step);
  put<double>(out, ckpt.coherence);
  for (auto arr : ckpt.params.arrays())
    for (double v : arr) put<double>(out, v);
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error("checkpoint: bad magic");
  }
  Reader r(bytes);
  for (std::size_t i = 0; i < sizeof(kMagic); ++i) r.get<char>();
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw Error("checkpoint: unsupported version " + std::to_string(version));
  LayerSizes sizes;
  sizes.points = static_cast<int>(r.get<std::uint32_t>());
  const auto n = r.get<std::uint32_t>();
  if (n == 0 || n > 64) throw Error("checkpoint: bad layer count");
  for (std::uint32_t i = 0; i < n; ++i) sizes.k.push_back(static_cast<int>(r.get<std::uint32_t>()));
  Checkpoint ckpt;
  ckpt.params = ModelParams(ParamArrays::zeros(sizes));
  ckpt.step = r.get<std::uint64_t>();
  ckpt.coherence = r.get<double>();
  for (auto arr : ckpt.params.arrays())
    for (double& v : arr) v = r.get<double>();
  if (!r.done()) throw Error("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("checkpoint: cannot open " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("checkpoint: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace nrsfm
