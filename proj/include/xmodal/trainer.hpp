#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "xmodal/embedding_store.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/projection.hpp"

namespace xmodal {

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 50;
  LossKind loss = LossKind::m3l;
  M3LHyperparams m3l;
  PATRHyperparams patr;
  ProjectionConfig projection;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_path;  // empty: no checkpoints written
  std::size_t checkpoint_every = 10;      // epochs
  std::size_t log_every = 0;              // batches; 0 disables per-batch logs
  double learning_rate = 1e-3;
  double beta1 = 0.99;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  // When false, the negative-text gradient is not routed back through the
  // projection head. Only useful for checking that a loss ignores it.
  bool backprop_negative_text = true;

  /// Throws Error(InvalidConfig).
  void validate() const;
};

/// Applies `key = value` lines ('#' starts a comment) on top of `config`.
/// Unknown keys and unparsable values raise Error(InvalidConfig).
void apply_config_text(TrainConfig& config, std::string_view text);
void apply_config_file(TrainConfig& config, const std::filesystem::path& path);
/// Sets a single key; same keys as the config file.
void apply_config_value(TrainConfig& config, std::string_view key, std::string_view value);

struct EpochRecord {
  std::size_t epoch = 0;  // zero-based, absolute across resumes
  double mean_loss = 0.0;
  std::size_t steps = 0;
  std::size_t degenerate = 0;
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t degenerate_events = 0;
};

/// Writes epoch, mean_loss, steps, degenerate as TSV with a header. Wall time
/// is left out so the file is reproducible.
void write_history_tsv(std::ostream& out, const TrainHistory& history);

struct TrainResult {
  ProjectionParams<float> params;
  AdamState<float> optimizer;
  TrainHistory history;
};

/// Optimizer steps per epoch: full batches plus the trailing partial batch
/// when it has at least two rows.
std::size_t steps_per_epoch(std::size_t pairs, std::size_t batch_size);

using TrainLogger = std::function<void(std::string_view)>;

/// Trains from freshly initialised parameters. Deterministic per
/// (dataset, config).
TrainResult train(const PairedDataset& dataset, const TrainConfig& config, const TrainLogger& log = {});

/// Continues from a checkpoint that carries optimizer state, up to
/// config.epochs total epochs. The result is bitwise identical to an
/// uninterrupted run. The returned history covers only the resumed epochs.
TrainResult resume(const std::filesystem::path& checkpoint_path, const PairedDataset& dataset,
                   const TrainConfig& config, const TrainLogger& log = {});

}  // namespace xmodal
