#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "bseg/boot/rounds.hpp"
#include "bseg/common/error.hpp"
#include "bseg/exp/config.hpp"

namespace bseg::exp {

// Error with a machine-readable category: "config", "missing_artifact",
// "stale_artifact", "lock", "runtime".
class PipelineError : public Error {
 public:
  PipelineError(std::string kind, const std::string& what) : Error(what), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

// Artifact locations under the output directory.
class Layout {
 public:
  explicit Layout(std::filesystem::path root) : root_(std::move(root)) {}
  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path config_copy() const { return root_ / "config.canonical"; }
  std::filesystem::path corpus_dir() const { return root_ / "corpus"; }
  std::filesystem::path corpus_stamp() const { return corpus_dir() / "corpus.json"; }
  std::filesystem::path dataset_manifest() const { return corpus_dir() / "dataset_manifest.jsonl"; }
  std::filesystem::path scene_dir(std::uint32_t id) const;
  std::filesystem::path round_dir(int round) const { return boot::round_dir(root_, round); }
  std::filesystem::path report_dir() const { return root_ / "report"; }
  std::filesystem::path lock_file() const { return root_ / ".lock"; }

 private:
  std::filesystem::path root_;
};

// Exclusive advisory lock on <output>/.lock for the lifetime of the object;
// throws PipelineError("lock") if another process holds it.
class OutputLock {
 public:
  explicit OutputLock(const Layout& layout);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  int fd_ = -1;
};

struct CommandOptions {
  bool force = false;
  int workers = 1;               // scoring and prediction threads
  std::ostream* log = nullptr;   // progress lines; null = silent
};

enum class Status { kDone, kSkipped };

struct CommandResult {
  Status status = Status::kDone;
  std::vector<std::filesystem::path> artifacts;
};

// Each command validates its prerequisites (naming missing artifacts),
// skips when its outputs exist with the same config hash, and refuses to
// overwrite outputs of a different config unless forced. Callers hold the
// output lock; run_command takes it.
CommandResult cmd_synth(const ExperimentConfig& config, const CommandOptions& options);
CommandResult cmd_train(const ExperimentConfig& config, const CommandOptions& options);
CommandResult cmd_bootstrap(const ExperimentConfig& config, const CommandOptions& options);
CommandResult cmd_eval(const ExperimentConfig& config, int round, const CommandOptions& options);
CommandResult cmd_report(const ExperimentConfig& config, const CommandOptions& options);

enum class Command { kSynth, kTrain, kBootstrap, kEval, kReport, kAll };
Command parse_command(std::string_view name);

// Takes the output lock, then runs one command (kAll: synth, train,
// bootstrap, report). `round` applies to kEval.
CommandResult run_command(Command command, const ExperimentConfig& config, const CommandOptions& options,
                          int round = 0);

// Loads the generated corpus after checking its stamp.
struct LoadedCorpus {
  std::vector<data::RasterScene> scenes;
  std::unique_ptr<data::SceneCorpus> corpus;
};
LoadedCorpus load_corpus(const ExperimentConfig& config);

boot::RoundConfig round_config(const ExperimentConfig& config, int workers);

// Fraction of hard structures (low-contrast roofs and trees) among all
// placed structures.
double hard_structure_fraction(std::span<const data::SceneInfo> scenes);

}  // namespace bseg::exp
