#include "bseg/boot/rounds.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "bseg/common/bytes.hpp"
#include "bseg/common/error.hpp"
#include "bseg/common/rng.hpp"

namespace bseg::boot {

using nlohmann::json;

RoundSeeds round_seeds(std::uint64_t train_base, std::uint64_t subset_base, int round) {
  RoundSeeds s;
  s.round = derive_seed(train_base, static_cast<std::uint64_t>(round));
  s.train = derive_seed(s.round, 1);
  s.subset = derive_seed(derive_seed(subset_base, static_cast<std::uint64_t>(round)), 2);
  return s;
}

std::size_t batches_per_epoch(std::size_t n, int batch_size) {
  const auto b = static_cast<std::size_t>(batch_size);
  std::size_t batches = (n + b - 1) / b;
  if (batches > 1 && n % b == 1) --batches;  // trailing singleton is merged
  return batches;
}

double RoundResult::subset_fraction() const { return subset ? subset->subset_fraction() : 1.0; }

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void check_compatible(const model::ArchitectureSpec& spec, const data::SceneCorpus& corpus) {
  const auto& g = corpus.manifest().geometry;
  if (spec.input_side != g.input_side || spec.output_side != g.output_side || spec.input_channels != 4) {
    throw Error("model geometry (" + std::to_string(spec.input_side) + "->" + std::to_string(spec.output_side) +
                ") does not match the corpus patches (" + std::to_string(g.input_side) + "->" +
                std::to_string(g.output_side) + ")");
  }
}

}  // namespace

std::vector<eval::EvalScene> predict_split(const model::Network<float>& net, const data::SceneCorpus& corpus,
                                           data::Split split, const ScoreOptions& options) {
  check_compatible(net.spec(), corpus);
  const auto& m = corpus.manifest();
  const auto indices = m.indices(split);
  const int side = m.geometry.output_side;
  const auto per = static_cast<std::size_t>(side * side);

  // Predictions in fixed chunks, as in scoring.
  std::vector<float> probs(indices.size() * per);
  const std::size_t chunks = (indices.size() + options.chunk - 1) / options.chunk;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto worker = [&] {
    model::Network<float> local = net;
    try {
      for (std::size_t c = next++; c < chunks; c = next++) {
        const auto part = std::span<const std::size_t>(indices).subspan(
            c * options.chunk, std::min(options.chunk, indices.size() - c * options.chunk));
        const auto p = local.predict(model::gather_inputs(corpus, part, net.spec()));
        std::copy(p.data().begin(), p.data().end(), probs.begin() + static_cast<std::ptrdiff_t>(c * options.chunk * per));
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = chunks;
    }
  };
  const int threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(std::max(1, options.workers)), std::max<std::size_t>(chunks, 1)));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::map<std::uint32_t, std::vector<eval::PatchPrediction>> by_scene;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& e = m.entries[indices[k]];
    by_scene[e.scene_id].push_back(
        {e.origin, std::vector<float>(probs.begin() + static_cast<std::ptrdiff_t>(k * per),
                                      probs.begin() + static_cast<std::ptrdiff_t>((k + 1) * per))});
  }
  std::vector<eval::EvalScene> out;
  std::vector<float> target(per);
  for (auto& [scene_id, patches] : by_scene) {
    int h = 0, w = 0;
    for (const auto& p : patches) {
      h = std::max(h, p.origin.y + side);
      w = std::max(w, p.origin.x + side);
    }
    eval::EvalScene s;
    s.prob = eval::stitch(patches, h, w, side);
    // Ground truth over the same interior, assembled from the targets.
    s.gt.assign(std::size_t(h) * w, 0);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const auto& e = m.entries[indices[k]];
      if (e.scene_id != scene_id) continue;
      corpus.fill_target(indices[k], target);
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          s.gt[std::size_t(e.origin.y + y) * w + e.origin.x + x] = target[std::size_t(y) * side + x] > 0.5f ? 1 : 0;
        }
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

RoundResult run_round(int round, const data::SceneCorpus& corpus, const loss::LossManifest* previous,
                      const RoundConfig& config, const model::EpochCallback& on_epoch) {
  if (round < 0) throw ContractViolation("round index must be >= 0");
  check_compatible(config.spec, corpus);
  const auto& m = corpus.manifest();
  const auto train_split = m.indices(data::Split::kTrain);
  const auto val_split = m.indices(data::Split::kVal);
  if (m.indices(data::Split::kTest).empty()) throw Error("corpus has no test samples");

  RoundResult r;
  r.round = round;
  r.seeds = round_seeds(config.seed, config.subset_seed, round);
  model::TrainConfig tc = config.train;
  tc.seed = r.seeds.train;

  std::vector<std::size_t> train_indices;
  if (round == 0) {
    train_indices = train_split;
  } else {
    if (previous == nullptr) {
      throw Error("round " + std::to_string(round) + " needs the loss manifest of round " + std::to_string(round - 1));
    }
    if (previous->round != round - 1) {
      throw Error("round " + std::to_string(round) + " was given the loss manifest of round " +
                  std::to_string(previous->round));
    }
    if (previous->records.size() != train_split.size()) {
      throw Error("loss manifest of round " + std::to_string(previous->round) + " covers " +
                  std::to_string(previous->records.size()) + " samples, training split has " +
                  std::to_string(train_split.size()));
    }
    if (config.force_full_subset) {
      train_indices = train_split;
    } else {
      r.subset = build_subset(*previous, r.seeds.subset, config.include_zero_bin,
                              sha256_hex(std::string_view(loss::encode_loss_manifest(*previous))));
      r.subset->config_hash = config.config_hash;
      for (const auto id : r.subset->subset_ids()) {
        const std::size_t i = corpus.index_of(id);
        if (m.entries[i].split != data::Split::kTrain) {
          throw Error("bootstrap subset holds sample " + std::to_string(id) + " outside the training split");
        }
        train_indices.push_back(i);
      }
    }
    if (config.match_steps && train_indices.size() != train_split.size()) {
      const std::size_t target = static_cast<std::size_t>(config.train.epochs) *
                                 batches_per_epoch(train_split.size(), config.train.batch_size);
      const std::size_t per = batches_per_epoch(train_indices.size(), config.train.batch_size);
      tc.epochs = static_cast<int>(std::max<std::size_t>(1, (target + per - 1) / per));
    }
  }
  r.epochs = tc.epochs;
  r.train_samples = train_indices.size();

  // Always from scratch: initial parameters depend only on (spec, round seed).
  auto t0 = std::chrono::steady_clock::now();
  auto trained = model::train(config.spec, std::nullopt, corpus, train_indices, val_split, tc, on_epoch);
  r.train_seconds = seconds_since(t0);
  r.steps = trained.steps;
  r.checkpoint = {config.spec, std::move(trained.params), config.config_hash, std::move(trained.history)};
  r.checkpoint_sha256 = sha256_hex(model::encode_checkpoint(r.checkpoint));

  const model::Network<float> net(config.spec, r.checkpoint.params);
  t0 = std::chrono::steady_clock::now();
  r.losses.round = round;
  r.losses.checkpoint_sha256 = r.checkpoint_sha256;
  r.losses.config_hash = config.config_hash;
  r.losses.records = score_samples(net, corpus, train_split, round, config.score);
  r.score_seconds = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const auto scenes = predict_split(net, corpus, data::Split::kTest, config.score);
  r.test = eval::evaluate(scenes, config.overlaps, config.thresholds, config.min_component);
  r.eval_seconds = seconds_since(t0);
  return r;
}

namespace {

std::string overlap_key(double o) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", o);
  return buf;
}

}  // namespace

std::string metrics_json(const RoundResult& r, const RoundConfig& config) {
  json be = json::object();
  for (const auto& b : r.test.break_even) {
    be[overlap_key(b.overlap)] = {{"value", b.value},
                                  {"threshold_lo", b.threshold_lo},
                                  {"threshold_hi", b.threshold_hi},
                                  {"interpolated", b.interpolated},
                                  {"crossed", b.crossed}};
  }
  const auto hist = loss::histogram(r.losses.records);
  json bins = json::object();
  for (std::size_t b = 0; b < loss::kBinCount; ++b) {
    bins[std::string(loss::bin_name(static_cast<loss::LossBin>(b)))] = {{"count", hist.counts[b]},
                                                                         {"mean", hist.means[b]}};
  }
  json j{{"round", r.round},
         {"config_hash", config.config_hash},
         {"checkpoint_sha256", r.checkpoint_sha256},
         {"seeds",
          {{"train_base", config.seed},
           {"subset_base", config.subset_seed},
           {"round", r.seeds.round},
           {"train", r.seeds.train},
           {"subset", r.seeds.subset}}},
         {"training_split_size", r.losses.records.size()},
         {"train_samples", r.train_samples},
         {"subset_fraction", r.subset_fraction()},
         {"forced_full_subset", r.round > 0 && config.force_full_subset},
         {"epochs", r.epochs},
         {"steps", r.steps},
         {"selected_epoch", r.checkpoint.history.selected_epoch ? json(*r.checkpoint.history.selected_epoch) : json()},
         {"training_loss_bins", bins},
         {"break_even", be}};
  if (r.subset) {
    j["hard"] = r.subset->hard.size();
    j["easy"] = r.subset->easy.size();
  }
  return j.dump(1) + "\n";
}

std::filesystem::path round_dir(const std::filesystem::path& root, int round) {
  return root / ("round_" + std::to_string(round));
}

void write_round(const std::filesystem::path& root, const RoundResult& r, const RoundConfig& config) {
  const auto dir = round_dir(root, r.round);
  std::filesystem::create_directories(dir);
  model::save_checkpoint(dir / "checkpoint.bin", r.checkpoint);
  loss::save_loss_manifest(dir / "loss_manifest.jsonl", r.losses);
  if (r.subset) write_text_file(dir / "bootstrap_manifest.json", encode_bootstrap_manifest(*r.subset));
  write_text_file(dir / "eval_curves.csv", eval::curves_csv(r.test));
  write_text_file(dir / "eval_break_even.csv", eval::break_even_csv(r.test));
  write_text_file(dir / "timing.json", json{{"train_seconds", r.train_seconds},
                                            {"score_seconds", r.score_seconds},
                                            {"eval_seconds", r.eval_seconds}}
                                           .dump(1) +
                                           "\n");
  // Written last: its presence marks a complete round.
  write_text_file(dir / "metrics.json", metrics_json(r, config));
}

}  // namespace bseg::boot
