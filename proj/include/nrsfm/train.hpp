#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <vector>

#include "nrsfm/data.hpp"
#include "nrsfm/network.hpp"

namespace nrsfm {

struct TrainConfig {
  int steps = 1000;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int checkpoint_every = 100;
  // Deterministic mode reduces per-frame gradients in frame order, so results
  // do not depend on the thread count, and writes wall_time as 0 in the log.
  bool deterministic = true;
  int threads = 1;

  void validate() const;
};

struct HistoryRecord {
  std::uint64_t step = 0;
  double mean_loss = 0.0;
  double coherence = 0.0;
};

struct CheckpointRecord {
  std::uint64_t step = 0;
  std::filesystem::path path;  // empty when training ran without an output directory
  double coherence = 0.0;
  double mean_loss = 0.0;
  std::shared_ptr<const ModelParams> params;  // snapshot of the saved parameters
};

struct TrainState {
  ModelParams params;
  Gradients first_moment;
  Gradients second_moment;
  std::uint64_t step = 0;
  std::vector<HistoryRecord> history;

  static TrainState start(ModelParams params);
};

// One Adam update with bias correction. Throws PoisonedStep (state untouched)
// if any gradient entry is non-finite.
void adam_step(TrainState& state, const Gradients& grads, const TrainConfig& cfg);

struct TrainOutput {
  std::filesystem::path dir;         // checkpoints + train_log.csv; empty = in memory only
  std::ostream* progress = nullptr;  // optional human-readable progress
};

struct TrainResult {
  TrainState state;
  std::vector<CheckpointRecord> records;
  std::size_t skipped_frames = 0;  // batch samples dropped for a degenerate camera, summed over steps
};

// Mean reprojection loss over all frames, skipping degenerate cameras.
double dataset_loss(const TrackSet& ts, const ModelParams& params, std::size_t* skipped = nullptr);

TrainResult train(const TrackSet& dataset, const LayerSizes& sizes, const TrainConfig& cfg,
                  const TrainOutput& output = {});

// Argmin of coherence; ties go to lower mean_loss, then the earlier step.
const CheckpointRecord& select_checkpoint(const std::vector<CheckpointRecord>& records);

// Mutual coherence of the final dictionary D_n.
double final_coherence(const ModelParams& params);

inline constexpr int kCollapseSteps = 100;
inline constexpr const char* kTrainLogHeader = "step,mean_loss,coherence,wall_time";

}  // namespace nrsfm
