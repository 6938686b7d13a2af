#include "bseg/exp/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <optional>

#include <json.hpp>

#include "bseg/boot/bootstrap.hpp"
#include "bseg/common/bytes.hpp"
#include "bseg/common/rng.hpp"
#include "bseg/data/dataset.hpp"
#include "bseg/data/scene.hpp"
#include "bseg/loss/manifest.hpp"
#include "bseg/model/checkpoint.hpp"

namespace bseg::exp {

using nlohmann::json;
namespace fs = std::filesystem;

std::filesystem::path Layout::scene_dir(std::uint32_t id) const {
  char name[32];
  std::snprintf(name, sizeof name, "scene_%04u", id);
  return corpus_dir() / "scenes" / name;
}

OutputLock::OutputLock(const Layout& layout) {
  fs::create_directories(layout.root());
  fd_ = ::open(layout.lock_file().c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw PipelineError("lock", "cannot open lock file " + layout.lock_file().string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw PipelineError("lock", "another bootseg process is using " + layout.root().string());
  }
}

OutputLock::~OutputLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

namespace {

void log(const CommandOptions& o, const std::string& line) {
  if (o.log) *o.log << line << std::endl;
}

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::optional<json> read_json(const fs::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  try {
    return json::parse(read_text_file(path));
  } catch (const std::exception& e) {
    throw PipelineError("stale_artifact", "cannot parse " + path.string() + ": " + e.what());
  }
}

enum class State { kMissing, kCurrent, kStale };

// State of an artifact group whose stamp file embeds a config hash.
State stamp_state(const fs::path& stamp, const std::string& hash) {
  const auto j = read_json(stamp);
  if (!j) return State::kMissing;
  return j->value("config_hash", std::string()) == hash ? State::kCurrent : State::kStale;
}

// True when the command should run; throws on stale outputs without --force.
bool needs_run(const fs::path& stamp, const std::string& hash, const CommandOptions& o, const std::string& what) {
  switch (stamp_state(stamp, hash)) {
    case State::kMissing:
      return true;
    case State::kCurrent:
      if (o.force) return true;
      log(o, what + ": up to date (config " + hash.substr(0, 12) + "), skipping; use --force to recompute");
      return false;
    case State::kStale:
      if (o.force) return true;
      throw PipelineError("stale_artifact", what + " in " + stamp.parent_path().string() +
                                                " was produced by a different config; rerun with --force or use "
                                                "another output directory");
  }
  return true;
}

void require_current(const fs::path& stamp, const std::string& hash, const std::string& what,
                     const std::string& producer) {
  switch (stamp_state(stamp, hash)) {
    case State::kCurrent:
      return;
    case State::kMissing:
      throw PipelineError("missing_artifact", "missing " + what + " (" + stamp.string() + "); run `bootseg " +
                                                  producer + "` first");
    case State::kStale:
      throw PipelineError("stale_artifact", what + " (" + stamp.string() + ") belongs to a different config; rerun `bootseg " +
                                                producer + " --force`");
  }
}

void write_config_copy(const ExperimentConfig& config) {
  const Layout layout(config.output_dir);
  fs::create_directories(layout.root());
  write_text_file(layout.config_copy(), "# config_hash " + config_hash(config) + "\n" + canonical_config(config));
}

std::string producer_of(int round) { return round == 0 ? "train" : "bootstrap"; }

model::EpochCallback epoch_logger(const CommandOptions& o, int round) {
  if (!o.log) return {};
  return [&o, round](const model::EpochRecord& e) {
    log(o, "round " + std::to_string(round) + " epoch " + std::to_string(e.epoch + 1) +
               " train " + format("%.4f", e.train_loss) + " val " + format("%.4f", e.val_loss) + " (" +
               format("%.1f", e.seconds) + " s)");
  };
}

void log_round(const CommandOptions& o, const boot::RoundResult& r) {
  std::string line = "round " + std::to_string(r.round) + ": " + std::to_string(r.train_samples) + " training samples";
  if (r.subset) line += " (subset fraction " + format("%.4f", r.subset->subset_fraction()) + ")";
  for (const auto& b : r.test.break_even) {
    line += ", break-even@" + format("%g", b.overlap) + " " + format("%.4f", b.value);
  }
  line += " [train " + format("%.0f", r.train_seconds) + " s, score " + format("%.0f", r.score_seconds) + " s]";
  log(o, line);
}

CommandResult round_artifacts(const Layout& layout, int round) {
  CommandResult res;
  const auto dir = layout.round_dir(round);
  for (const char* f : {"checkpoint.bin", "loss_manifest.jsonl", "bootstrap_manifest.json", "metrics.json",
                        "eval_curves.csv", "eval_break_even.csv"}) {
    if (fs::exists(dir / f)) res.artifacts.push_back(dir / f);
  }
  return res;
}

}  // namespace

double hard_structure_fraction(std::span<const data::SceneInfo> scenes) {
  std::size_t hard = 0, all = 0;
  for (const auto& s : scenes) {
    hard += s.stats.hard_structures();
    all += s.stats.structures();
  }
  return all ? static_cast<double>(hard) / static_cast<double>(all) : 0.0;
}

boot::RoundConfig round_config(const ExperimentConfig& config, int workers) {
  boot::RoundConfig r;
  r.spec = config.model;
  r.train = config.train;
  r.seed = config.train.seed;
  r.subset_seed = config.bootstrap.seed;
  r.include_zero_bin = config.bootstrap.include_zero_bin;
  r.force_full_subset = config.bootstrap.force_full_subset;
  r.match_steps = config.bootstrap.match_steps;
  r.overlaps = config.eval.overlaps;
  r.thresholds = config.threshold_grid();
  r.min_component = config.eval.min_component;
  r.score.workers = std::max(1, workers);
  r.config_hash = config_hash(config);
  return r;
}

CommandResult cmd_synth(const ExperimentConfig& config, const CommandOptions& o) {
  const Layout layout(config.output_dir);
  const auto hash = config_hash(config);
  write_config_copy(config);
  CommandResult res;
  res.artifacts = {layout.dataset_manifest(), layout.corpus_stamp()};
  if (!needs_run(layout.corpus_stamp(), hash, o, "corpus")) {
    res.status = Status::kSkipped;
    return res;
  }
  fs::remove_all(layout.corpus_dir());
  const auto& c = config.corpus;
  std::vector<data::SceneInfo> infos;
  for (int i = 0; i < c.scenes; ++i) {
    const auto id = static_cast<std::uint32_t>(i);
    const auto seed = derive_seed(c.seed, id);
    const auto scene = data::generate_scene(id, seed, c.height, c.width, c.scene);
    data::write_scene(layout.scene_dir(id), scene);
    infos.push_back({id, seed, scene.height, scene.width, scene.stats});
  }
  const auto manifest = data::build_manifest(infos, c.geometry, c.ratios, c.split_seed);
  const auto text = data::encode_dataset_manifest(manifest);
  write_text_file(layout.dataset_manifest(), text);
  const auto counts = manifest.counts();
  const double hard = hard_structure_fraction(infos);
  write_text_file(layout.corpus_stamp(), json{{"config_hash", hash},
                                              {"dataset_manifest_sha256", sha256_hex(std::string_view(text))},
                                              {"scenes", c.scenes},
                                              {"samples", {{"train", counts[0]}, {"val", counts[1]}, {"test", counts[2]}}},
                                              {"hard_structure_fraction", hard}}
                                                 .dump(1) +
                                             "\n");
  log(o, "corpus: " + std::to_string(c.scenes) + " scenes, " + std::to_string(counts[0]) + "/" +
             std::to_string(counts[1]) + "/" + std::to_string(counts[2]) + " train/val/test patches, hard structures " +
             format("%.1f%%", 100.0 * hard));
  return res;
}

LoadedCorpus load_corpus(const ExperimentConfig& config) {
  const Layout layout(config.output_dir);
  const auto hash = config_hash(config);
  require_current(layout.corpus_stamp(), hash, "corpus", "synth");
  const auto stamp = *read_json(layout.corpus_stamp());
  if (!fs::exists(layout.dataset_manifest())) {
    throw PipelineError("missing_artifact", "missing " + layout.dataset_manifest().string() + "; run `bootseg synth --force`");
  }
  const auto text = read_text_file(layout.dataset_manifest());
  if (sha256_hex(std::string_view(text)) != stamp.at("dataset_manifest_sha256").get<std::string>()) {
    throw PipelineError("stale_artifact", layout.dataset_manifest().string() + " does not match its stamp; rerun `bootseg synth --force`");
  }
  auto manifest = data::decode_dataset_manifest(text);
  LoadedCorpus out;
  std::string missing;
  for (const auto& s : manifest.scenes) {
    const auto dir = layout.scene_dir(s.id);
    if (!fs::exists(dir)) {
      missing += (missing.empty() ? "" : ", ") + std::to_string(s.id);
      continue;
    }
    out.scenes.push_back(data::read_scene(dir, s.id, s.seed));
  }
  if (!missing.empty()) {
    throw PipelineError("missing_artifact", "missing scene directories for ids " + missing + "; run `bootseg synth --force`");
  }
  out.corpus = std::make_unique<data::SceneCorpus>(std::move(manifest), out.scenes, config.corpus.normalize);
  return out;
}

CommandResult cmd_train(const ExperimentConfig& config, const CommandOptions& o) {
  const Layout layout(config.output_dir);
  const auto hash = config_hash(config);
  write_config_copy(config);
  if (!needs_run(layout.round_dir(0) / "metrics.json", hash, o, "round 0")) {
    auto res = round_artifacts(layout, 0);
    res.status = Status::kSkipped;
    return res;
  }
  const auto corpus = load_corpus(config);
  const auto rc = round_config(config, o.workers);
  log(o, "round 0: training on the full training split");
  const auto r = boot::run_round(0, *corpus.corpus, nullptr, rc, epoch_logger(o, 0));
  boot::write_round(layout.root(), r, rc);
  log_round(o, r);
  return round_artifacts(layout, 0);
}

CommandResult cmd_bootstrap(const ExperimentConfig& config, const CommandOptions& o) {
  const Layout layout(config.output_dir);
  const auto hash = config_hash(config);
  write_config_copy(config);
  CommandResult res;
  res.status = Status::kSkipped;
  std::optional<LoadedCorpus> corpus;
  const auto rc = round_config(config, o.workers);
  for (int k = 1; k <= config.bootstrap.rounds; ++k) {
    const auto part = round_artifacts(layout, k);
    if (!needs_run(layout.round_dir(k) / "metrics.json", hash, o, "round " + std::to_string(k))) {
      res.artifacts.insert(res.artifacts.end(), part.artifacts.begin(), part.artifacts.end());
      continue;
    }
    const auto prev_dir = layout.round_dir(k - 1);
    require_current(prev_dir / "metrics.json", hash, "round " + std::to_string(k - 1), producer_of(k - 1));
    const auto previous = loss::load_loss_manifest(prev_dir / "loss_manifest.jsonl");
    if (!corpus) corpus = load_corpus(config);
    try {
      log(o, "round " + std::to_string(k) + ": building subset from round " + std::to_string(k - 1) + " losses");
      const auto r = boot::run_round(k, *corpus->corpus, &previous, rc, epoch_logger(o, k));
      boot::write_round(layout.root(), r, rc);
      log_round(o, r);
    } catch (const PipelineError&) {
      throw;
    } catch (const std::exception& e) {
      throw PipelineError("runtime", "round " + std::to_string(k) + ": " + e.what());
    }
    res.status = Status::kDone;
    const auto done = round_artifacts(layout, k);
    res.artifacts.insert(res.artifacts.end(), done.artifacts.begin(), done.artifacts.end());
  }
  return res;
}

CommandResult cmd_eval(const ExperimentConfig& config, int round, const CommandOptions& o) {
  const Layout layout(config.output_dir);
  const auto hash = config_hash(config);
  if (round < 0 || round > config.bootstrap.rounds) {
    throw PipelineError("config", "round " + std::to_string(round) + " is outside 0.." +
                                      std::to_string(config.bootstrap.rounds));
  }
  const auto dir = layout.round_dir(round);
  require_current(dir / "metrics.json", hash, "round " + std::to_string(round), producer_of(round));
  CommandResult res;
  res.artifacts = {dir / "eval_curves.csv", dir / "eval_break_even.csv"};
  if (!o.force && fs::exists(res.artifacts[0]) && fs::exists(res.artifacts[1])) {
    log(o, "round " + std::to_string(round) + " evaluation: up to date, skipping; use --force to recompute");
    res.status = Status::kSkipped;
    return res;
  }
  const auto ckpt = model::load_checkpoint(dir / "checkpoint.bin");
  if (ckpt.config_hash != hash) {
    throw PipelineError("stale_artifact", (dir / "checkpoint.bin").string() + " belongs to a different config");
  }
  const auto corpus = load_corpus(config);
  const model::Network<float> net(ckpt.spec, ckpt.params);
  const auto scenes = boot::predict_split(net, *corpus.corpus, data::Split::kTest, {std::max(1, o.workers), 32});
  const auto report = eval::evaluate(scenes, config.eval.overlaps, config.threshold_grid(), config.eval.min_component);
  write_text_file(res.artifacts[0], eval::curves_csv(report));
  write_text_file(res.artifacts[1], eval::break_even_csv(report));
  for (const auto& b : report.break_even) {
    log(o, "round " + std::to_string(round) + " break-even@" + format("%g", b.overlap) + " = " + format("%.4f", b.value));
  }
  return res;
}

namespace {

std::string overlap_key(double o) { return format("%g", o); }

std::string cell(double v) { return std::isnan(v) ? std::string() : format("%.10g", v); }

double break_even_from(const json& metrics, double overlap) {
  const auto& be = metrics.at("break_even");
  const auto key = overlap_key(overlap);
  if (!be.contains(key) || be.at(key).at("value").is_null()) return std::nan("");
  return be.at(key).at("value").get<double>();
}

}  // namespace

CommandResult cmd_report(const ExperimentConfig& config, const CommandOptions& o) {
  const Layout layout(config.output_dir);
  const auto hash = config_hash(config);
  write_config_copy(config);
  const int rounds = config.bootstrap.rounds;
  const auto dir = layout.report_dir();
  CommandResult res;
  res.artifacts = {dir / "break_even.csv", dir / "pr_curves.csv", dir / "cohorts.csv", dir / "summary.json"};
  for (int k = 0; k <= rounds; ++k) {
    require_current(layout.round_dir(k) / "metrics.json", hash, "round " + std::to_string(k), producer_of(k));
  }
  if (!needs_run(dir / "summary.json", hash, o, "report")) {
    res.status = Status::kSkipped;
    return res;
  }
  std::vector<json> metrics;
  std::vector<loss::LossManifest> losses;
  for (int k = 0; k <= rounds; ++k) {
    metrics.push_back(*read_json(layout.round_dir(k) / "metrics.json"));
    losses.push_back(loss::load_loss_manifest(layout.round_dir(k) / "loss_manifest.jsonl"));
  }

  // Break-even table: one row per overlap, baseline then bootstrap rounds.
  std::string be = "overlap,baseline";
  for (int k = 1; k <= rounds; ++k) be += ",round_" + std::to_string(k);
  be += '\n';
  for (const double ov : config.eval.overlaps) {
    be += overlap_key(ov);
    for (const auto& m : metrics) be += ',' + cell(break_even_from(m, ov));
    be += '\n';
  }

  std::string curves;
  for (int k = 0; k <= rounds; ++k) {
    const auto text = read_text_file(layout.round_dir(k) / "eval_curves.csv");
    std::size_t pos = text.find('\n');
    if (k == 0) curves += "round," + text.substr(0, pos + 1);
    while (pos + 1 < text.size()) {
      const auto next = text.find('\n', pos + 1);
      curves += std::to_string(k) + ',' + text.substr(pos + 1, next - pos);
      pos = next;
    }
  }

  auto cohorts = boot::track_cohorts(losses);
  for (std::size_t k = 0; k < metrics.size(); ++k) cohorts.test_break_even[k] = break_even_from(metrics[k], 0.5);

  json rows = json::array();
  for (const auto& m : metrics) {
    json r{{"round", m.at("round")},
           {"subset_fraction", m.at("subset_fraction")},
           {"train_samples", m.at("train_samples")},
           {"epochs", m.at("epochs")},
           {"steps", m.at("steps")},
           {"break_even", json::object()}};
    for (const double ov : config.eval.overlaps) {
      const double v = break_even_from(m, ov);
      r["break_even"][overlap_key(ov)] = std::isnan(v) ? json() : json(v);
    }
    rows.push_back(r);
  }
  const auto stamp = read_json(layout.corpus_stamp());
  json summary{{"config_hash", hash},
               {"hard_structure_fraction", stamp ? stamp->at("hard_structure_fraction") : json()},
               {"rounds", rows}};

  fs::create_directories(dir);
  write_text_file(res.artifacts[0], be);
  write_text_file(res.artifacts[1], curves);
  write_text_file(res.artifacts[2], boot::cohort_csv(cohorts));
  write_text_file(res.artifacts[3], summary.dump(1) + "\n");
  log(o, "report written to " + dir.string());
  return res;
}

Command parse_command(std::string_view name) {
  if (name == "synth") return Command::kSynth;
  if (name == "train") return Command::kTrain;
  if (name == "bootstrap") return Command::kBootstrap;
  if (name == "eval") return Command::kEval;
  if (name == "report") return Command::kReport;
  if (name == "all") return Command::kAll;
  throw PipelineError("config", "unknown command '" + std::string(name) + "'");
}

CommandResult run_command(Command command, const ExperimentConfig& config, const CommandOptions& options, int round) {
  const OutputLock lock{Layout(config.output_dir)};
  switch (command) {
    case Command::kSynth:
      return cmd_synth(config, options);
    case Command::kTrain:
      return cmd_train(config, options);
    case Command::kBootstrap:
      return cmd_bootstrap(config, options);
    case Command::kEval:
      return cmd_eval(config, round, options);
    case Command::kReport:
      return cmd_report(config, options);
    case Command::kAll: {
      CommandResult all;
      all.status = Status::kSkipped;
      for (const auto& step : {cmd_synth, cmd_train, cmd_bootstrap, cmd_report}) {
        const auto r = step(config, options);
        if (r.status == Status::kDone) all.status = Status::kDone;
        all.artifacts.insert(all.artifacts.end(), r.artifacts.begin(), r.artifacts.end());
      }
      return all;
    }
  }
  return {};
}

}  // namespace bseg::exp
