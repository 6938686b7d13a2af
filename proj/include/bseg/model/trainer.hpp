#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "bseg/model/network.hpp"
#include "bseg/model/sample_source.hpp"

namespace bseg::model {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  // lr *= lr_decay once epoch >= floor(decay_fraction * epochs).
  double lr_decay = 0.1;
  double decay_fraction = 2.0 / 3.0;
  int batch_size = 16;
  int epochs = 10;
  // Stop after this many epochs without a new validation minimum; 0 = never.
  int patience = 0;
  std::uint64_t seed = 1;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;  // wall time; never serialized into deterministic artifacts
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::optional<int> selected_epoch;  // argmin of validation loss
};

struct TrainResult {
  ModelParams<float> params;
  TrainHistory history;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Initial parameters when training from scratch; a pure function of
// (spec, config.seed).
ModelParams<float> initial_params(const ArchitectureSpec& spec, const TrainConfig& config);

// Minibatch SGD with momentum on mean pixel BCE. Returns the parameters of the
// epoch with the lowest validation loss. Single-threaded and deterministic.
// Throws Error naming epoch and batch if the loss stops being finite.
TrainResult train(const ArchitectureSpec& spec, std::optional<ModelParams<float>> init, const SampleSource& data,
                  std::span<const std::size_t> train_indices, std::span<const std::size_t> val_indices,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

// Mean per-sample BCE in infer mode.
double mean_loss(Network<float>& net, const SampleSource& data, std::span<const std::size_t> indices,
                 std::size_t batch_size = 32);

// Loads samples [indices] into an N x C x side x side batch.
ad::Tensor<float> gather_inputs(const SampleSource& data, std::span<const std::size_t> indices,
                                const ArchitectureSpec& spec);
ad::Tensor<float> gather_targets(const SampleSource& data, std::span<const std::size_t> indices,
                                 const ArchitectureSpec& spec);

}  // namespace bseg::model
