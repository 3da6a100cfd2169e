#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "nrsfm/data.hpp"
#include "nrsfm/network.hpp"
#include "nrsfm/train.hpp"

namespace nrsfm::cli {

// Merged view of a config file. Every component seed is derived from `seed`.
struct RunConfig {
  SynthConfig synth;
  std::optional<LayerSizes> model;  // network sizes; p comes from the tracks
  TrainConfig train;
  std::vector<double> ratios{0.0, 0.05, 0.10};
  std::uint64_t seed = 0;
};

// Parses an INI file with sections [run], [synth], [model], [train], [sweep].
// Unknown sections or keys are rejected. Throws ConfigError.
RunConfig load_config(const std::filesystem::path& path);

// Applies the master seed to every seeded component.
void apply_seed(RunConfig& cfg, std::uint64_t seed);

std::vector<double> parse_list(const std::string& text);

// Entry point shared by the executable and the tests. Results go to `out`,
// diagnostics to `err`. Returns the process exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

}  // namespace nrsfm::cli
