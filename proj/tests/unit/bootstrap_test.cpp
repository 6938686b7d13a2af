#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "bseg/boot/bootstrap.hpp"
#include "bseg/boot/rounds.hpp"
#include "bseg/common/bytes.hpp"
#include "bseg/common/error.hpp"
#include "bseg/common/rng.hpp"
#include "bseg/data/scene.hpp"
#include "model_test_support.hpp"

namespace bseg::boot {
namespace {

using loss::LossBin;
using loss::LossManifest;
using loss::LossRecord;

model::ArchitectureSpec tiny_spec() {
  model::ArchitectureSpec s;
  s.stem_filters = 4;
  s.layers_per_block = 1;
  s.growth_rate = 3;
  s.fc_hidden = 8;
  return s;
}

// Records with prescribed raw losses; ids are 0..n-1.
LossManifest manifest_from(const std::vector<double>& raw, int round = 0) {
  LossManifest m;
  m.round = round;
  for (std::size_t i = 0; i < raw.size(); ++i) m.records.push_back(loss::make_record(static_cast<std::uint32_t>(i), raw[i], round));
  return m;
}

LossManifest hard_and_easy(std::size_t hard, std::size_t easy) {
  std::vector<double> raw;
  for (std::size_t i = 0; i < hard; ++i) raw.push_back(0.5);
  for (std::size_t i = 0; i < easy; ++i) raw.push_back(0.1);
  return manifest_from(raw);
}

LossManifest random_manifest(std::size_t n, std::uint64_t seed, int round = 0) {
  Rng rng(seed);
  std::vector<double> raw(n);
  for (auto& r : raw) {
    const double u = uniform01(rng);
    // Spread over every bin, including exact zeros and values above 1.
    r = u < 0.1 ? 0.0 : u < 0.5 ? uniform(rng, 0.0, 0.2) : uniform(rng, 0.0, 1.4);
  }
  return manifest_from(raw, round);
}

std::set<std::uint32_t> as_set(const std::vector<std::uint32_t>& v) { return {v.begin(), v.end()}; }

TEST(BuildSubsetTest, BalancedWhenPoolIsLarge) {
  const auto m = build_subset(hard_and_easy(100, 900), 3);
  EXPECT_EQ(m.hard.size(), 100u);
  EXPECT_EQ(m.easy.size(), 100u);
  EXPECT_EQ(m.subset_size(), 200u);
  EXPECT_EQ(m.round, 1);
  EXPECT_DOUBLE_EQ(m.subset_fraction(), 200.0 / 1000.0);
}

TEST(BuildSubsetTest, TakesWholePoolWhenExhausted) {
  const auto m = build_subset(hard_and_easy(500, 100), 3);
  EXPECT_EQ(m.hard.size(), 500u);
  EXPECT_EQ(m.easy.size(), 100u);
  EXPECT_EQ(m.subset_size(), 600u);
  std::vector<std::uint32_t> pool(100);
  for (std::uint32_t i = 0; i < 100; ++i) pool[i] = 500 + i;
  EXPECT_EQ(m.easy, pool);
}

TEST(BuildSubsetTest, DeterministicAndSeedSensitive) {
  const auto scored = hard_and_easy(100, 900);
  const auto a = build_subset(scored, 7);
  const auto b = build_subset(scored, 7);
  const auto c = build_subset(scored, 8);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.hard, c.hard);
  EXPECT_NE(a.easy, c.easy);
}

TEST(BuildSubsetTest, PropertiesOnTenThousandRecords) {
  for (const std::uint64_t seed : {1u, 2u, 3u}) {
    const auto scored = random_manifest(10000, seed);
    const auto m = build_subset(scored, seed + 100);
    std::set<std::uint32_t> hard_oracle, pool_oracle;
    for (const auto& r : scored.records) {
      if (r.clipped_loss > 0.2) hard_oracle.insert(r.sample_id);
      if (r.clipped_loss <= 0.2) pool_oracle.insert(r.sample_id);
    }
    EXPECT_EQ(as_set(m.hard), hard_oracle);
    EXPECT_EQ(m.easy.size(), std::min(hard_oracle.size(), pool_oracle.size()));
    for (const auto id : m.easy) {
      EXPECT_TRUE(pool_oracle.count(id));
      EXPECT_FALSE(hard_oracle.count(id));
    }
    EXPECT_EQ(as_set(m.easy).size(), m.easy.size());
    EXPECT_TRUE(std::is_sorted(m.hard.begin(), m.hard.end()));
    EXPECT_TRUE(std::is_sorted(m.easy.begin(), m.easy.end()));
    EXPECT_DOUBLE_EQ(m.subset_fraction(), static_cast<double>(m.hard.size() + m.easy.size()) / 10000.0);
    EXPECT_EQ(build_subset(scored, seed + 100), m);
  }
}

TEST(BuildSubsetTest, ZeroBinCanBeExcluded) {
  // 10 hard, 5 in B1, 20 perfect.
  std::vector<double> raw(10, 0.9);
  raw.insert(raw.end(), 5, 0.1);
  raw.insert(raw.end(), 20, 0.0);
  const auto with_zero = build_subset(manifest_from(raw), 1, true);
  const auto without = build_subset(manifest_from(raw), 1, false);
  EXPECT_EQ(with_zero.easy.size(), 10u);
  EXPECT_EQ(without.easy.size(), 5u);
  for (const auto id : without.easy) EXPECT_TRUE(id >= 10 && id < 15);
}

TEST(BuildSubsetTest, NoHardSamplesIsAnError) {
  try {
    build_subset(hard_and_easy(0, 50), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("no-op"), std::string::npos);
  }
}

TEST(BuildSubsetTest, ManifestRoundTrip) {
  auto m = build_subset(random_manifest(500, 4), 9, true, "abc");
  m.config_hash = "cfg";
  EXPECT_EQ(decode_bootstrap_manifest(encode_bootstrap_manifest(m)), m);
  EXPECT_THROW(decode_bootstrap_manifest("{\"format\":\"other\"}"), Error);
  EXPECT_THROW(decode_bootstrap_manifest("not json"), Error);
}

// Noise inputs; targets are all ones or a per-sample checkerboard.
testing::VectorSource noise_source(std::size_t n, std::uint64_t seed, bool all_ones = false) {
  testing::VectorSource src(4 * 80 * 80, 576);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> in(4 * 6400), target(576);
    for (auto& v : in) v = static_cast<float>(normal(rng, 0.0, 0.5));
    for (std::size_t p = 0; p < target.size(); ++p) target[p] = all_ones ? 1.0f : static_cast<float>((p + i) % 2);
    src.add(std::move(in), std::move(target));
  }
  return src;
}

model::ModelParams<float> with_output_bias(model::ModelParams<float> p, float bias) {
  for (auto& e : p.entries) {
    if (e.name == "fc2.weight") e.value.fill(0.0f);
    if (e.name == "fc2.bias") e.value.fill(bias);
  }
  return p;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

TEST(ScoreTest, ConstantHalfModelLandsInB4) {
  const auto src = noise_source(10, 1);
  const model::Network<float> net(tiny_spec(), with_output_bias(model::build_model<float>(tiny_spec(), 2), 0.0f));
  const auto records = score_samples(net, src, iota(10), 0);
  ASSERT_EQ(records.size(), 10u);
  for (const auto& r : records) {
    EXPECT_NEAR(r.raw_loss, std::log(2.0), 1e-6);
    EXPECT_EQ(r.bin, LossBin::kB4);
  }
}

TEST(ScoreTest, ExactModelLandsInZeroBin) {
  const auto src = noise_source(6, 1, true);
  const model::Network<float> net(tiny_spec(), with_output_bias(model::build_model<float>(tiny_spec(), 2), 100.0f));
  for (const auto& r : score_samples(net, src, iota(6), 0)) EXPECT_EQ(r.bin, LossBin::kZero);
}

TEST(ScoreTest, WorkerCountDoesNotChangeRecords) {
  const auto src = noise_source(70, 3);
  const model::Network<float> net(tiny_spec(), model::build_model<float>(tiny_spec(), 5));
  const auto idx = iota(70);
  const auto one = score_samples(net, src, idx, 2, {1, 8});
  const auto eight = score_samples(net, src, idx, 2, {8, 8});
  EXPECT_EQ(one, eight);
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].sample_id, i);
    EXPECT_EQ(one[i].round, 2);
  }
}

TEST(ScoreTest, MissingSamplesAreListed) {
  const auto src = noise_source(3, 3);
  const model::Network<float> net(tiny_spec(), model::build_model<float>(tiny_spec(), 5));
  const std::vector<std::size_t> idx{0, 5, 9};
  try {
    score_samples(net, src, idx, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("5, 9"), std::string::npos);
  }
}

// Group-by oracle: ordered maps keyed by id and cohort, independent of the
// implementation's hash tables; sums run over sorted values.
TEST(CohortTest, MatchesGroupByOracle) {
  std::vector<LossManifest> ms;
  for (int r = 0; r < 4; ++r) {
    auto m = random_manifest(3000, 50 + r, r);
    // Reverse record order in odd rounds: cohorts key on id, not position.
    if (r % 2) std::reverse(m.records.begin(), m.records.end());
    ms.push_back(std::move(m));
  }
  const auto rep = track_cohorts(ms);
  ASSERT_EQ(rep.rounds, (std::vector<int>{0, 1, 2, 3}));
  std::map<std::uint32_t, std::size_t> cohort;
  for (const auto& r : ms[0].records) cohort[r.sample_id] = loss::bin_index(r.bin);
  std::size_t total = 0;
  for (std::size_t c = 0; c < loss::kBinCount; ++c) total += rep.sizes[c];
  EXPECT_EQ(total, 3000u);
  for (std::size_t k = 0; k < ms.size(); ++k) {
    std::map<std::size_t, std::vector<double>> groups;
    for (const auto& r : ms[k].records) groups[cohort.at(r.sample_id)].push_back(r.clipped_loss);
    for (std::size_t c = 0; c < loss::kBinCount; ++c) {
      auto& g = groups[c];
      EXPECT_EQ(g.size(), rep.sizes[c]);
      if (g.empty()) {
        EXPECT_TRUE(std::isnan(rep.means[k][c]));
        continue;
      }
      std::sort(g.begin(), g.end());
      double s = 0.0;
      for (const double x : g) s += x;
      EXPECT_EQ(rep.means[k][c], s / static_cast<double>(g.size())) << "round " << k << " cohort " << c;
    }
  }
}

TEST(CohortTest, SingleRoundEqualsHistogramMeans) {
  const auto m = random_manifest(2000, 8);
  const auto rep = track_cohorts(std::span<const LossManifest>(&m, 1));
  const auto hist = loss::histogram(m.records);
  ASSERT_EQ(rep.means.size(), 1u);
  for (std::size_t c = 0; c < loss::kBinCount; ++c) {
    EXPECT_EQ(rep.sizes[c], hist.counts[c]);
    EXPECT_NEAR(rep.means[0][c], hist.means[c], 1e-12);
  }
}

TEST(CohortTest, IdMismatchIsAnError) {
  auto a = random_manifest(100, 1, 0);
  auto b = random_manifest(100, 2, 1);
  b.records.back().sample_id = 1000;
  EXPECT_THROW(track_cohorts(std::vector<LossManifest>{a, b}), Error);
  b = random_manifest(99, 2, 1);
  EXPECT_THROW(track_cohorts(std::vector<LossManifest>{a, b}), Error);
  EXPECT_THROW(track_cohorts(std::vector<LossManifest>{}), Error);
}

TEST(CohortTest, CsvShape) {
  std::vector<LossManifest> ms{random_manifest(200, 1, 0), random_manifest(200, 2, 1)};
  auto rep = track_cohorts(ms);
  rep.test_break_even = {0.5, 0.625};
  const auto csv = cohort_csv(rep);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "cohort,size,round_0,round_1");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
  EXPECT_NE(csv.find("test_break_even_0.5,,0.5,0.625\n"), std::string::npos);
}

TEST(RoundsTest, SeedsDifferPerRound) {
  const auto a = round_seeds(9, 9, 0), b = round_seeds(9, 9, 1);
  EXPECT_NE(a.round, b.round);
  EXPECT_NE(a.train, b.train);
  EXPECT_NE(a.train, a.subset);
  EXPECT_EQ(round_seeds(9, 9, 1).train, b.train);
  // The two knobs are independent.
  EXPECT_EQ(round_seeds(9, 5, 1).train, b.train);
  EXPECT_NE(round_seeds(9, 5, 1).subset, b.subset);
  EXPECT_EQ(round_seeds(4, 9, 1).subset, b.subset);
}

TEST(RoundsTest, BatchesPerEpochMergesSingleton) {
  EXPECT_EQ(batches_per_epoch(32, 16), 2u);
  EXPECT_EQ(batches_per_epoch(33, 16), 2u);
  EXPECT_EQ(batches_per_epoch(34, 16), 3u);
  EXPECT_EQ(batches_per_epoch(1, 16), 1u);
}

struct SmallCorpus {
  std::vector<data::RasterScene> scenes;
  std::unique_ptr<data::SceneCorpus> corpus;
};

SmallCorpus small_corpus() {
  SmallCorpus c;
  std::vector<data::SceneInfo> infos;
  for (std::uint32_t i = 0; i < 6; ++i) {
    c.scenes.push_back(data::generate_scene(i, 100 + i, 160, 160, data::SceneParams{}));
    const auto& s = c.scenes.back();
    infos.push_back({s.id, s.seed, s.height, s.width, s.stats});
  }
  auto m = data::build_manifest(infos, data::PatchGeometry{}, {0.6, 0.2, 0.2}, 4);
  c.corpus = std::make_unique<data::SceneCorpus>(std::move(m), c.scenes);
  return c;
}

RoundConfig small_config() {
  RoundConfig cfg;
  cfg.spec = tiny_spec();
  cfg.train.epochs = 1;
  cfg.train.batch_size = 8;
  cfg.seed = 21;
  cfg.config_hash = "test-hash";
  return cfg;
}

TEST(RoundsTest, PredictSplitCoversTiledInterior) {
  const auto c = small_corpus();
  const model::Network<float> net(tiny_spec(), model::build_model<float>(tiny_spec(), 1));
  const auto scenes = predict_split(net, *c.corpus, data::Split::kTest);
  ASSERT_FALSE(scenes.empty());
  for (const auto& s : scenes) {
    // 160 wide: six 24-pixel output windows -> interior 144.
    EXPECT_EQ(s.prob.height, 144);
    EXPECT_EQ(s.prob.width, 144);
    EXPECT_EQ(s.gt.size(), 144u * 144u);
  }
}

TEST(RoundsTest, TwoRoundsFollowProtocol) {
  const auto c = small_corpus();
  const auto cfg = small_config();
  const auto& m = c.corpus->manifest();
  const auto train_split = m.indices(data::Split::kTrain);

  const auto r0 = run_round(0, *c.corpus, nullptr, cfg);
  EXPECT_FALSE(r0.subset.has_value());
  EXPECT_EQ(r0.train_samples, train_split.size());
  EXPECT_EQ(r0.losses.records.size(), train_split.size());
  EXPECT_EQ(r0.checkpoint.config_hash, "test-hash");
  EXPECT_EQ(r0.checkpoint_sha256, sha256_hex(model::encode_checkpoint(r0.checkpoint)));
  EXPECT_EQ(r0.test.break_even.size(), 4u);
  // Initial parameters of round 0 depend only on (spec, round seed).
  auto tc = cfg.train;
  tc.seed = round_seeds(cfg.seed, cfg.subset_seed, 0).train;
  EXPECT_EQ(r0.checkpoint.params.seed, model::initial_params(cfg.spec, tc).seed);

  EXPECT_THROW(run_round(1, *c.corpus, nullptr, cfg), Error);
  auto wrong = r0.losses;
  wrong.round = 3;
  EXPECT_THROW(run_round(1, *c.corpus, &wrong, cfg), Error);

  const auto r1 = run_round(1, *c.corpus, &r0.losses, cfg);
  ASSERT_TRUE(r1.subset.has_value());
  std::set<std::uint32_t> subset(r1.subset->hard.begin(), r1.subset->hard.end());
  subset.insert(r1.subset->easy.begin(), r1.subset->easy.end());
  for (const auto& rec : r0.losses.records) {
    if (rec.clipped_loss > 0.2) EXPECT_TRUE(subset.count(rec.sample_id)) << rec.sample_id;
  }
  for (const auto id : subset) EXPECT_EQ(m.entries[c.corpus->index_of(id)].split, data::Split::kTrain);
  EXPECT_EQ(r1.train_samples, subset.size());
  EXPECT_DOUBLE_EQ(r1.subset_fraction(), static_cast<double>(subset.size()) / train_split.size());
  EXPECT_EQ(r1.subset->config_hash, "test-hash");
  // Every round scores the full training split.
  EXPECT_EQ(r1.losses.records.size(), train_split.size());
  // Step matching: at least as many SGD steps as round 0.
  if (subset.size() < train_split.size()) EXPECT_GE(r1.steps, r0.steps);
  // Same seed for round 1's init as a fresh computation: weights never carried over.
  tc.seed = round_seeds(cfg.seed, cfg.subset_seed, 1).train;
  EXPECT_EQ(r1.checkpoint.params.seed, model::initial_params(cfg.spec, tc).seed);

  const auto again = run_round(1, *c.corpus, &r0.losses, cfg);
  EXPECT_EQ(again.subset, r1.subset);
  EXPECT_EQ(again.epochs, r1.epochs);
  EXPECT_EQ(again.checkpoint.history.selected_epoch, r1.checkpoint.history.selected_epoch);
  EXPECT_EQ(again.checkpoint.params, r1.checkpoint.params);
  EXPECT_EQ(again.checkpoint_sha256, r1.checkpoint_sha256);
  EXPECT_EQ(again.losses.records, r1.losses.records);
}

TEST(RoundsTest, ForcedFullSubsetTrainsOnEverything) {
  const auto c = small_corpus();
  auto cfg = small_config();
  cfg.force_full_subset = true;
  const auto r0 = run_round(0, *c.corpus, nullptr, cfg);
  const auto r1 = run_round(1, *c.corpus, &r0.losses, cfg);
  EXPECT_FALSE(r1.subset.has_value());
  EXPECT_EQ(r1.train_samples, r0.train_samples);
  EXPECT_EQ(r1.epochs, r0.epochs);
  EXPECT_DOUBLE_EQ(r1.subset_fraction(), 1.0);
}

TEST(RoundsTest, WriteRoundLayout) {
  const auto c = small_corpus();
  const auto cfg = small_config();
  const auto r0 = run_round(0, *c.corpus, nullptr, cfg);
  const auto r1 = run_round(1, *c.corpus, &r0.losses, cfg);
  const auto root = std::filesystem::temp_directory_path() / "bseg_rounds_layout_test";
  std::filesystem::remove_all(root);
  write_round(root, r0, cfg);
  write_round(root, r1, cfg);
  for (const char* f : {"checkpoint.bin", "loss_manifest.jsonl", "metrics.json", "eval_curves.csv",
                        "eval_break_even.csv", "timing.json"}) {
    EXPECT_TRUE(std::filesystem::exists(round_dir(root, 0) / f)) << f;
    EXPECT_TRUE(std::filesystem::exists(round_dir(root, 1) / f)) << f;
  }
  EXPECT_FALSE(std::filesystem::exists(round_dir(root, 0) / "bootstrap_manifest.json"));
  const auto bm = decode_bootstrap_manifest(read_text_file(round_dir(root, 1) / "bootstrap_manifest.json"));
  EXPECT_EQ(bm, *r1.subset);
  EXPECT_EQ(loss::load_loss_manifest(round_dir(root, 0) / "loss_manifest.jsonl").records, r0.losses.records);
  const auto metrics = read_text_file(round_dir(root, 1) / "metrics.json");
  EXPECT_NE(metrics.find("\"subset_fraction\""), std::string::npos);
  EXPECT_NE(metrics.find("\"0.5\""), std::string::npos);
  std::filesystem::remove_all(root);
}

}  // namespace
}  // namespace bseg::boot
