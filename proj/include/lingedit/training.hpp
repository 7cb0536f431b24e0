#pragma once

#include <filesystem>
#include <functional>
#include <optional>

#include "lingedit/datasets.hpp"
#include "lingedit/model.hpp"

namespace lingedit {

/// The corpus split named by the config. For the synthetic corpus the train
/// split is synth_generate(synth_items, synth_seed) and the held-out split uses
/// synth_seed + 1 with max(100, synth_items / 5) items.
Dataset load_corpus(const TrainingConfig& config, Split split);

/// Fresh state: model initialized from config.seed, optimizers at step 0.
TrainState initial_state(const TrainingConfig& config, const Vocabulary& vocab);

/// One prepared minibatch: augmented images with a positive caption and a
/// mismatching caption per item.
struct TrainBatch {
  std::vector<RgbImage> images;
  std::vector<std::string> positive;
  std::vector<std::string> mismatch;
};

/// Draws the batch for `indices` from the state's random stream.
TrainBatch prepare_batch(const Dataset& data, const std::vector<std::size_t>& indices, TrainState& state);

/// One discriminator update on -L_D with generator outputs detached, then one
/// generator (and, unless frozen, text encoder) update on L_G.
LossReport train_step(TrainState& state, const TrainBatch& batch);

struct TrainingHooks {
  /// Called after every completed epoch with the mean report of that epoch.
  std::function<void(const TrainState&, const LossReport&)> on_epoch;
  /// Stop after this many completed epochs (simulated interruption).
  std::optional<long long> stop_after_epoch;
};

/// Runs (or resumes) training until config.epochs. Appends one JSON line per
/// step to `<output_dir>/losses.ndjson`, writes `checkpoint-<epoch>.ckpt` and
/// `latest.ckpt` every config.checkpoint_every epochs and at the end.
/// Returns the final state.
TrainState run_training(TrainState state, const Dataset& data, const TrainingHooks& hooks = {});

/// Reads the step records of a loss log.
std::vector<LossReport> read_loss_log(const std::filesystem::path& path);

}  // namespace lingedit
