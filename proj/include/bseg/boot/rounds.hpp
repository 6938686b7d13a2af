#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bseg/boot/bootstrap.hpp"
#include "bseg/data/dataset.hpp"
#include "bseg/eval/evaluation.hpp"
#include "bseg/model/checkpoint.hpp"
#include "bseg/model/trainer.hpp"

namespace bseg::boot {

struct RoundConfig {
  model::ArchitectureSpec spec;
  model::TrainConfig train;  // train.seed is replaced by the round's seed
  std::uint64_t seed = 1;         // training base seed; round k trains from derive_seed(seed, k)
  std::uint64_t subset_seed = 1;  // easy-sample draw of round k uses derive_seed(subset_seed, k)
  bool include_zero_bin = true;
  // Train round k >= 1 on the whole training split (A/B control).
  bool force_full_subset = false;
  // Scale round k >= 1 epochs so the number of SGD steps matches round 0.
  bool match_steps = true;
  std::vector<double> overlaps{std::begin(eval::kReportOverlaps), std::end(eval::kReportOverlaps)};
  std::vector<double> thresholds = eval::default_threshold_grid();
  std::size_t min_component = 0;
  ScoreOptions score;
  std::string config_hash;
};

struct RoundSeeds {
  std::uint64_t round = 0;
  std::uint64_t train = 0;
  std::uint64_t subset = 0;
};

RoundSeeds round_seeds(std::uint64_t train_base, std::uint64_t subset_base, int round);

// Batches per epoch for n samples, matching the trainer's batching.
std::size_t batches_per_epoch(std::size_t n, int batch_size);

struct RoundResult {
  int round = 0;
  RoundSeeds seeds;
  model::Checkpoint checkpoint;
  std::string checkpoint_sha256;
  loss::LossManifest losses;  // whole training split, scored by this round's model
  std::optional<BootstrapManifest> subset;
  int epochs = 0;
  std::size_t train_samples = 0;
  std::size_t steps = 0;
  eval::EvalReport test;
  double train_seconds = 0.0;
  double score_seconds = 0.0;
  double eval_seconds = 0.0;

  double subset_fraction() const;  // 1 for round 0 and forced-full rounds
};

// Probability rasters for every scene holding patches of `split`, stitched
// over the tiled interior, paired with the matching ground truth.
std::vector<eval::EvalScene> predict_split(const model::Network<float>& net, const data::SceneCorpus& corpus,
                                           data::Split split, const ScoreOptions& options = {});

// Round 0 trains on the full training split. Round k >= 1 needs the previous
// round's loss manifest, builds the balanced subset and retrains from
// scratch. Every round scores the full training split and evaluates the
// frozen test split.
RoundResult run_round(int round, const data::SceneCorpus& corpus, const loss::LossManifest* previous,
                      const RoundConfig& config, const model::EpochCallback& on_epoch = {});

// Structured metrics: break-even per overlap, subset fraction, seeds.
std::string metrics_json(const RoundResult& r, const RoundConfig& config);

// round_<k>/{checkpoint.bin, loss_manifest.jsonl, bootstrap_manifest.json,
// metrics.json, eval_curves.csv, eval_break_even.csv}; timings go to
// round_<k>/timing.json so the other artifacts stay reproducible.
std::filesystem::path round_dir(const std::filesystem::path& root, int round);
void write_round(const std::filesystem::path& root, const RoundResult& r, const RoundConfig& config);

}  // namespace bseg::boot
