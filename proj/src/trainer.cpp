#include "xmodal/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "xmodal/checkpoint.hpp"
#include "xmodal/error.hpp"
#include "xmodal/miner.hpp"

namespace xmodal {

namespace {

enum class StreamTag : std::uint32_t { shuffle = 1, dropout = 2 };

// Independent stream per (seed, counter, purpose); recomputable from the
// counter alone, which is what lets resume reproduce an uninterrupted run.
Rng derived_stream(std::uint64_t seed, std::uint64_t counter, StreamTag tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32),
                    static_cast<std::uint32_t>(tag)};
  return Rng(seq);
}

void check_dataset(const PairedDataset& ds, const TrainConfig& config) {
  if (ds.empty()) throw Error(ErrorCode::EmptyDataset, "no training pairs");
  if (ds.size() < 2) throw Error(ErrorCode::BatchTooSmall, "training needs at least 2 pairs");
  if (ds.texts.cols() != config.projection.input_dim) {
    throw Error(ErrorCode::DimensionMismatch, "text width " + std::to_string(ds.texts.cols()) +
                                                  " != projection input_dim " +
                                                  std::to_string(config.projection.input_dim));
  }
  if (ds.images.cols() != config.projection.output_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "image width " + std::to_string(ds.images.cols()) +
                                                  " != projection output width " +
                                                  std::to_string(config.projection.output_dim()));
  }
}

bool finite(const Matrix<float>& m) {
  return std::all_of(m.flat().begin(), m.flat().end(), [](float v) { return std::isfinite(v); });
}

void run_epochs(const PairedDataset& ds, const TrainConfig& config, TrainResult& state, std::size_t first_epoch,
                const TrainLogger& log) {
  const std::size_t n = ds.size();
  const std::size_t batch = config.batch_size;
  const std::size_t steps = steps_per_epoch(n, batch);
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = first_epoch; epoch < config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = derived_stream(config.seed, epoch, StreamTag::shuffle);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord record;
    record.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t begin = s * batch;
      const std::size_t end = std::min(begin + batch, n);
      std::span<const std::size_t> rows(order.data() + begin, end - begin);

      const Matrix<float> texts = gather_rows(ds.texts, rows);
      TripletBatch<float> tb;
      tb.pos_image = gather_rows(ds.images, rows);

      auto dropout_rng = derived_stream(config.seed, state.optimizer.step, StreamTag::dropout);
      auto pass = forward(state.params, texts, Mode::train, dropout_rng);
      const auto mined = mine_hard_negatives(pass.output, tb.pos_image);
      tb.neg_image = gather_rows(tb.pos_image, mined.neg_index);
      tb.neg_text = gather_rows(pass.output, mined.neg_index);
      tb.anchor_text = std::move(pass.output);

      auto loss = config.loss == LossKind::m3l ? m3l_loss(tb, config.m3l) : patr_loss(tb, config.patr);
      if (!std::isfinite(loss.loss)) {
        throw Error(ErrorCode::NumericalFailure, "non-finite loss at epoch " + std::to_string(epoch));
      }

      // Each caption was projected once; the negative texts are rows of that
      // same output, so their gradient is scattered back onto those rows.
      Matrix<float> upstream = std::move(loss.grad_anchor);
      if (config.backprop_negative_text) {
        for (std::size_t i = 0; i < mined.neg_index.size(); ++i) {
          auto dst = upstream.row(mined.neg_index[i]);
          auto src = loss.grad_neg_text.row(i);
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
      }
      if (!finite(upstream)) {
        throw Error(ErrorCode::NumericalFailure, "non-finite loss gradient at epoch " + std::to_string(epoch));
      }
      const auto grads = backward(state.params, pass.trace, upstream);
      adam_step(state.optimizer, state.params, grads.params);
      if (!state.params.all_finite()) {
        throw Error(ErrorCode::NumericalFailure, "non-finite parameter after step " +
                                                     std::to_string(state.optimizer.step));
      }

      loss_sum += loss.loss;
      record.degenerate += loss.degenerate;
      ++record.steps;
      if (log && config.log_every > 0 && (s + 1) % config.log_every == 0) {
        log("epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(s + 1) + "/" +
            std::to_string(steps) + " loss " + std::to_string(loss.loss));
      }
    }
    record.mean_loss = record.steps ? loss_sum / static_cast<double>(record.steps) : 0.0;
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    state.history.degenerate_events += record.degenerate;
    state.history.epochs.push_back(record);
    if (log) {
      log("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(config.epochs) + " mean loss " +
          std::to_string(record.mean_loss) + " (" + std::to_string(record.wall_seconds) + " s)");
    }

    const bool last = epoch + 1 == config.epochs;
    if (!config.checkpoint_path.empty() && (last || (epoch + 1) % config.checkpoint_every == 0)) {
      save_checkpoint(config.checkpoint_path, state.params, &state.optimizer);
    }
  }
}

AdamState<float> configured_optimizer(const ProjectionParams<float>& params, const TrainConfig& config) {
  auto adam = AdamState<float>::fresh(params);
  adam.learning_rate = config.learning_rate;
  adam.beta1 = config.beta1;
  adam.beta2 = config.beta2;
  adam.epsilon = config.adam_epsilon;
  return adam;
}

bool same_architecture(const ProjectionConfig& a, const ProjectionConfig& b) {
  return a.input_dim == b.input_dim && a.layer_dims == b.layer_dims && a.dropout_rates == b.dropout_rates &&
         a.l2norm_flags == b.l2norm_flags;
}

}  // namespace

std::size_t steps_per_epoch(std::size_t pairs, std::size_t batch_size) {
  return pairs / batch_size + (pairs % batch_size >= 2 ? 1 : 0);
}

TrainResult train(const PairedDataset& dataset, const TrainConfig& config, const TrainLogger& log) {
  config.validate();
  check_dataset(dataset, config);
  TrainResult state;
  state.params = init_params<float>(config.projection);
  state.optimizer = configured_optimizer(state.params, config);
  run_epochs(dataset, config, state, 0, log);
  return state;
}

TrainResult resume(const std::filesystem::path& checkpoint_path, const PairedDataset& dataset,
                   const TrainConfig& config, const TrainLogger& log) {
  config.validate();
  auto ck = load_checkpoint(checkpoint_path);
  if (!ck.optimizer) {
    throw Error(ErrorCode::MissingOptimizerState, checkpoint_path.string() + " has no optimizer section");
  }
  if (!same_architecture(ck.params.architecture(), config.projection)) {
    throw Error(ErrorCode::ConfigMismatch, "checkpoint architecture differs from the configured projection");
  }
  check_dataset(dataset, config);
  const std::size_t steps = steps_per_epoch(dataset.size(), config.batch_size);
  if (ck.optimizer->step % steps != 0) {
    throw Error(ErrorCode::ConfigMismatch, "checkpoint step " + std::to_string(ck.optimizer->step) +
                                               " is not an epoch boundary for this dataset and batch size");
  }
  TrainResult state{std::move(ck.params), std::move(*ck.optimizer), {}};
  const std::size_t done = static_cast<std::size_t>(state.optimizer.step / steps);
  run_epochs(dataset, config, state, done, log);
  return state;
}

void write_history_tsv(std::ostream& out, const TrainHistory& history) {
  out << "epoch\tmean_loss\tsteps\tdegenerate\n";
  char buf[64];
  for (const auto& e : history.epochs) {
    auto r = std::to_chars(buf, buf + sizeof buf, e.mean_loss);
    out << (e.epoch + 1) << '\t' << std::string_view(buf, static_cast<std::size_t>(r.ptr - buf)) << '\t'
        << e.steps << '\t' << e.degenerate << '\n';
  }
}

}  // namespace xmodal
