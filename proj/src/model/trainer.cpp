#include "bseg/model/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "bseg/common/error.hpp"
#include "bseg/common/memory.hpp"
#include "bseg/loss/binning.hpp"

namespace bseg::model {

void validate(const TrainConfig& c) {
  if (c.batch_size < 2) throw ContractViolation("train.batch_size must be >= 2 (batch norm)");
  if (!(c.learning_rate > 0.0)) throw ContractViolation("train.learning_rate must be > 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ContractViolation("train.momentum must lie in [0, 1)");
  if (!(c.lr_decay > 0.0)) throw ContractViolation("train.lr_decay must be > 0");
  if (!(c.decay_fraction > 0.0)) throw ContractViolation("train.decay_fraction must be > 0");
  if (c.epochs < 0) throw ContractViolation("train.epochs must be >= 0");
  if (c.patience < 0) throw ContractViolation("train.patience must be >= 0");
}

ad::Tensor<float> gather_inputs(const SampleSource& data, std::span<const std::size_t> indices,
                                const ArchitectureSpec& spec) {
  const auto c = static_cast<std::size_t>(spec.input_channels);
  const auto s = static_cast<std::size_t>(spec.input_side);
  if (data.input_size() != c * s * s) {
    throw ContractViolation("sample inputs have " + std::to_string(data.input_size()) +
                            " values, architecture expects " + std::to_string(c * s * s));
  }
  ad::Tensor<float> batch({indices.size(), c, s, s});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    data.fill_input(indices[i], batch.data().subspan(i * c * s * s, c * s * s));
  }
  return batch;
}

ad::Tensor<float> gather_targets(const SampleSource& data, std::span<const std::size_t> indices,
                                 const ArchitectureSpec& spec) {
  const auto s = static_cast<std::size_t>(spec.output_side);
  if (data.target_size() != s * s) {
    throw ContractViolation("sample targets have " + std::to_string(data.target_size()) +
                            " values, architecture expects " + std::to_string(s * s));
  }
  ad::Tensor<float> batch({indices.size(), s, s});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    data.fill_target(indices[i], batch.data().subspan(i * s * s, s * s));
  }
  return batch;
}

double mean_loss(Network<float>& net, const SampleSource& data, std::span<const std::size_t> indices,
                 std::size_t batch_size) {
  if (indices.empty()) throw ContractViolation("mean_loss: no samples");
  const auto per = static_cast<std::size_t>(net.spec().output_side * net.spec().output_side);
  double total = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const auto probs = net.predict(gather_inputs(data, chunk, net.spec()));
    const auto targets = gather_targets(data, chunk, net.spec());
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      total += loss::bce_loss(probs.data().subspan(i * per, per), targets.data().subspan(i * per, per));
    }
  }
  return total / static_cast<double>(indices.size());
}

ModelParams<float> initial_params(const ArchitectureSpec& spec, const TrainConfig& config) {
  return build_model<float>(spec, derive_seed(config.seed, 0));
}

namespace {

// Splits a shuffled order into batches of batch_size; a trailing singleton is
// folded into the previous batch so batch norm always sees >= 2 samples.
std::vector<std::span<const std::size_t>> make_batches(std::span<const std::size_t> order, std::size_t batch_size) {
  std::vector<std::span<const std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    out.push_back(order.subspan(start, std::min(batch_size, order.size() - start)));
  }
  if (out.size() > 1 && out.back().size() == 1) {
    const auto merged_start = out[out.size() - 2].data() - order.data();
    out.pop_back();
    out.back() = order.subspan(static_cast<std::size_t>(merged_start));
  }
  return out;
}

}  // namespace

TrainResult train(const ArchitectureSpec& spec, std::optional<ModelParams<float>> init, const SampleSource& data,
                  std::span<const std::size_t> train_indices, std::span<const std::size_t> val_indices,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  validate(config);
  retain_freed_memory();
  if (train_indices.size() < 2) throw ContractViolation("training needs at least 2 samples");
  if (val_indices.empty()) throw ContractViolation("training needs a non-empty validation split");

  Network<float> net(spec, init ? std::move(*init) : initial_params(spec, config));
  TrainResult result;
  result.params = net.params();
  if (config.epochs == 0) return result;

  Rng shuffle_rng(derive_seed(config.seed, 1));
  Rng dropout_rng(derive_seed(config.seed, 2));
  std::vector<ad::Tensor<float>> velocity;
  for (const auto& e : net.params().entries) {
    velocity.emplace_back(is_trainable(e.role) ? e.value.shape() : ad::Shape{1});
  }

  const int decay_epoch = static_cast<int>(std::floor(config.decay_fraction * config.epochs));
  std::vector<std::size_t> order(train_indices.begin(), train_indices.end());
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double lr = epoch >= decay_epoch ? config.learning_rate * config.lr_decay : config.learning_rate;
    // Fisher-Yates with the portable draw, so orders match across platforms.
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(shuffle_rng, 0, static_cast<std::int64_t>(i - 1)));
      std::swap(order[i - 1], order[j]);
    }
    const auto batches = make_batches(order, static_cast<std::size_t>(config.batch_size));
    double epoch_loss = 0.0;
    std::size_t epoch_samples = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      ad::Tape<float> tape;
      const ad::Var input = tape.constant(gather_inputs(data, batches[b], spec));
      const auto targets = gather_targets(data, batches[b], spec);
      const auto fwd = net.forward(tape, input, ad::Mode::kTrain, &dropout_rng);
      const ad::Var loss = ad::binary_cross_entropy(tape, fwd.probabilities, targets, loss::kProbabilityClamp);
      const double value = tape.value(loss)[0];
      if (!std::isfinite(value)) {
        throw Error("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(b));
      }
      tape.backward(loss);
      auto& entries = net.params().entries;
      for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!is_trainable(entries[i].role)) continue;
        const auto& g = tape.grad(fwd.param_vars[i]);
        if (g.empty()) continue;
        auto& v = velocity[i];
        auto& w = entries[i].value;
        for (std::size_t k = 0; k < w.size(); ++k) {
          v[k] = static_cast<float>(config.momentum) * v[k] + g[k];
          w[k] -= static_cast<float>(lr) * v[k];
        }
      }
      epoch_loss += value * static_cast<double>(batches[b].size());
      epoch_samples += batches[b].size();
      ++result.steps;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(epoch_samples);
    rec.val_loss = mean_loss(net, data, val_indices);
    if (!std::isfinite(rec.val_loss)) {
      throw Error("training diverged: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      result.history.selected_epoch = epoch;
      result.params = net.params();
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace bseg::model
