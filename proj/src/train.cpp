#include "nrsfm/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

#include "nrsfm/checkpoint.hpp"
#include "nrsfm/errors.hpp"
#include "nrsfm/sparse.hpp"

namespace nrsfm {

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train: steps must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw ConfigError("train: beta1 must lie in (0,1)");
  if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw ConfigError("train: beta2 must lie in (0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train: eps must be positive");
  if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be >= 1");
  if (threads < 1) throw ConfigError("train: threads must be >= 1");
}

TrainState TrainState::start(ModelParams params) {
  TrainState s;
  s.first_moment = Gradients::zeros_like(params);
  s.second_moment = Gradients::zeros_like(params);
  s.params = std::move(params);
  return s;
}

void adam_step(TrainState& state, const Gradients& grads, const TrainConfig& cfg) {
  if (!grads.all_finite()) throw PoisonedStep("adam: non-finite gradient");
  auto p = state.params.arrays();
  auto m = state.first_moment.arrays();
  auto v = state.second_moment.arrays();
  auto g = grads.arrays();
  if (p.size() != g.size()) throw ShapeError("adam: gradient structure mismatch");
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (p[a].size() != g[a].size()) throw ShapeError("adam: gradient array size mismatch");
  }

  const double t = static_cast<double>(state.step + 1);
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (std::size_t a = 0; a < p.size(); ++a) {
    for (std::size_t i = 0; i < p[a].size(); ++i) {
      const double gi = g[a][i];
      m[a][i] = b1 * m[a][i] + (1.0 - b1) * gi;
      v[a][i] = b2 * v[a][i] + (1.0 - b2) * gi * gi;
      const double mh = m[a][i] / c1;
      const double vh = v[a][i] / c2;
      p[a][i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.adam_eps);
    }
  }
  ++state.step;
}

double final_coherence(const ModelParams& params) {
  return mutual_coherence(Dictionary(params.dicts.back()));
}

double dataset_loss(const TrackSet& ts, const ModelParams& params, std::size_t* skipped) {
  double sum = 0.0;
  std::size_t used = 0, bad = 0;
  for (const auto& fr : ts.frames) {
    try {
      sum += forward(fr.points, params).loss;
      ++used;
    } catch (const DegenerateCamera&) {
      ++bad;
    } catch (const NumericalFailure&) {
      ++bad;
    }
  }
  if (skipped) *skipped = bad;
  return used ? sum / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
}

const CheckpointRecord& select_checkpoint(const std::vector<CheckpointRecord>& records) {
  if (records.empty()) throw EmptyHistory("select_checkpoint: no checkpoints recorded");
  return *std::min_element(records.begin(), records.end(), [](const auto& a, const auto& b) {
    if (a.coherence != b.coherence) return a.coherence < b.coherence;
    if (a.mean_loss != b.mean_loss) return a.mean_loss < b.mean_loss;
    return a.step < b.step;
  });
}

namespace {

std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

std::string checkpoint_name(std::uint64_t step) {
  std::string digits = std::to_string(step);
  if (digits.size() < 8) digits.insert(0, 8 - digits.size(), '0');
  return "checkpoint_" + digits + ".bin";
}

// Per-frame loss and gradient, or nothing if the frame's camera is degenerate.
struct FrameResult {
  bool ok = false;
  double loss = 0.0;
};

FrameResult frame_gradient(const Mat& w, const ModelParams& params, Gradients& into) {
  try {
    const ForwardTrace t = forward(w, params);
    backward_accumulate(t, w, params, 1.0, into);
    return {true, t.loss};
  } catch (const DegenerateCamera&) {
  } catch (const GradientInstability&) {
  } catch (const NumericalFailure&) {
  }
  return {};
}

void zero(Gradients& g) {
  for (auto s : g.arrays()) std::fill(s.begin(), s.end(), 0.0);
}

class BatchSampler {
 public:
  BatchSampler(std::size_t frames, std::uint64_t seed) : order_(frames), seed_(seed) { reshuffle(); }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    batch = std::min(batch, order_.size());
    while (out.size() < batch) {
      if (cursor_ == order_.size()) {
        ++epoch_;
        reshuffle();
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed_, epoch_, 0x5eed));
    std::shuffle(order_.begin(), order_.end(), rng);
    cursor_ = 0;
  }

  std::vector<std::size_t> order_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
};

}  // namespace

TrainResult train(const TrackSet& dataset, const LayerSizes& sizes, const TrainConfig& cfg,
                  const TrainOutput& output) {
  cfg.validate();
  sizes.validate();
  if (dataset.points != sizes.points) throw ShapeError("train: track point count does not match model");
  if (dataset.frames.empty() && cfg.steps > 0) throw ConfigError("train: dataset has no frames");

  TrainResult result;
  result.state = TrainState::start(init_params(sizes, cfg.seed));
  TrainState& state = result.state;

  std::ofstream log;
  if (!output.dir.empty()) {
    std::filesystem::create_directories(output.dir);
    log.open(output.dir / "train_log.csv", std::ios::binary | std::ios::trunc);
    if (!log) throw Error("train: cannot open log in " + output.dir.string());
    log << kTrainLogHeader << '\n';
  }
  const auto t0 = std::chrono::steady_clock::now();

  auto checkpoint = [&](std::uint64_t step) {
    CheckpointRecord rec;
    rec.step = step;
    rec.coherence = final_coherence(state.params);
    rec.mean_loss = dataset_loss(dataset, state.params);
    rec.params = std::make_shared<const ModelParams>(state.params);
    if (!output.dir.empty()) {
      rec.path = output.dir / checkpoint_name(step);
      save_checkpoint(Checkpoint{state.params, step, rec.coherence}, rec.path);
      const double wall =
          cfg.deterministic
              ? 0.0
              : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log << rec.step << ',' << format_real(rec.mean_loss) << ',' << format_real(rec.coherence) << ','
          << format_real(wall) << '\n';
      log.flush();
    }
    state.history.push_back({rec.step, rec.mean_loss, rec.coherence});
    if (output.progress) {
      *output.progress << "step " << rec.step << " loss " << rec.mean_loss << " coherence "
                       << rec.coherence << '\n';
    }
    result.records.push_back(std::move(rec));
  };

  checkpoint(0);
  if (cfg.steps == 0) return result;

  BatchSampler sampler(dataset.size(), cfg.seed);
  const std::size_t batch = std::min<std::size_t>(cfg.batch_size, dataset.size());
  const int threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(batch)));

  // Deterministic mode keeps one gradient slot per batch member and sums them
  // in batch order; otherwise each worker accumulates its own chunk.
  const std::size_t slots = cfg.deterministic ? batch : static_cast<std::size_t>(threads);
  std::vector<Gradients> partial(slots, Gradients::zeros_like(state.params));
  std::vector<FrameResult> frame_results(batch);
  Gradients total = Gradients::zeros_like(state.params);
  int bad_streak = 0;

  for (int it = 0; it < cfg.steps; ++it) {
    const auto idx = sampler.next(batch);
    for (auto& g : partial) zero(g);

    auto work = [&](int worker) {
      const std::size_t lo = idx.size() * worker / threads;
      const std::size_t hi = idx.size() * (worker + 1) / threads;
      for (std::size_t b = lo; b < hi; ++b) {
        Gradients& slot = cfg.deterministic ? partial[b] : partial[worker];
        frame_results[b] = frame_gradient(dataset.frames[idx[b]].points, state.params, slot);
      }
    };
    if (threads == 1) {
      work(0);
    } else {
      std::vector<std::jthread> pool;
      for (int t = 1; t < threads; ++t) pool.emplace_back(work, t);
      work(0);
    }

    std::size_t used = 0;
    double loss_sum = 0.0;
    for (const auto& r : frame_results) {
      if (r.ok) {
        ++used;
        loss_sum += r.loss;
      } else {
        ++result.skipped_frames;
      }
    }
    zero(total);
    for (const auto& g : partial) total.add_scaled(g, 1.0);

    bool stepped = false;
    if (used > 0 && std::isfinite(loss_sum)) {
      // Mean of per-frame losses, so scale the summed gradient by 1/used.
      for (auto s : total.arrays())
        for (double& v : s) v /= static_cast<double>(used);
      try {
        adam_step(state, total, cfg);
        stepped = true;
      } catch (const PoisonedStep&) {
      }
    }
    if (stepped) {
      bad_streak = 0;
    } else {
      if (++bad_streak >= kCollapseSteps) {
        const std::string last = result.records.empty() ? std::string() : result.records.back().path.string();
        throw TrainingCollapse("train: " + std::to_string(kCollapseSteps) +
                                   " consecutive steps without a finite loss",
                               last);
      }
    }

    const auto done = static_cast<std::uint64_t>(it) + 1;
    if (done % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0 || it + 1 == cfg.steps) {
      checkpoint(done);
    }
  }
  return result;
}

}  // namespace nrsfm
