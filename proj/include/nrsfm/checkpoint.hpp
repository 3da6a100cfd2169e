#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "nrsfm/network.hpp"

namespace nrsfm {

struct Checkpoint {
  ModelParams params;
  std::uint64_t step = 0;
  double coherence = 0.0;  // mutual coherence of D_n when saved
};

// Little-endian binary container:
//   "NRSFMCKP" | u32 version | u32 p | u32 n | n x u32 k | u64 step |
//   f64 coherence | every parameter array as f64 in declared order.
// Identical parameters always produce identical bytes.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace nrsfm
