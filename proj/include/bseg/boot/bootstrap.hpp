#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bseg/loss/binning.hpp"
#include "bseg/loss/manifest.hpp"
#include "bseg/model/network.hpp"
#include "bseg/model/sample_source.hpp"

namespace bseg::boot {

struct ScoreOptions {
  int workers = 1;
  // Samples per inference batch. Chunk boundaries are fixed by index
  // position, so results do not depend on the worker count.
  std::size_t chunk = 32;
};

// One record per index, in index order; infer mode. Indices outside the
// source throw Error listing them.
std::vector<loss::LossRecord> score_samples(const model::Network<float>& net, const model::SampleSource& data,
                                            std::span<const std::size_t> indices, int round,
                                            const ScoreOptions& options = {});

// Training subset for the next round.
struct BootstrapManifest {
  int round = 0;  // the round this subset trains
  std::uint64_t seed = 0;
  bool include_zero_bin = true;
  std::string source_loss_manifest;  // sha256 of the scored loss manifest
  std::string config_hash;
  std::size_t training_size = 0;     // records in the source manifest
  std::vector<std::uint32_t> hard;   // ascending
  std::vector<std::uint32_t> easy;   // ascending

  std::size_t subset_size() const { return hard.size() + easy.size(); }
  double subset_fraction() const;
  std::vector<std::uint32_t> subset_ids() const;  // ascending union

  friend bool operator==(const BootstrapManifest&, const BootstrapManifest&) = default;
};

// hard = every record with clipped loss > 0.2; easy = uniform sample without
// replacement of min(|hard|, |pool|) from the B1 bin (plus ZERO when
// include_zero_bin). Throws Error when nothing is hard.
BootstrapManifest build_subset(const loss::LossManifest& scored, std::uint64_t seed, bool include_zero_bin = true,
                               std::string source_ref = {});

std::string encode_bootstrap_manifest(const BootstrapManifest& m);
BootstrapManifest decode_bootstrap_manifest(std::string_view text);

// Mean clipped loss of each round-0 cohort (bin membership in the first
// manifest) at every round.
struct CohortReport {
  std::vector<int> rounds;
  std::array<std::size_t, loss::kBinCount> sizes{};
  std::vector<std::array<double, loss::kBinCount>> means;  // [round][cohort]; NaN for an empty cohort
  std::vector<double> test_break_even;                      // per round, NaN when unknown
};

// Throws Error if the manifests do not cover identical sample id sets.
CohortReport track_cohorts(std::span<const loss::LossManifest> manifests);

// Rows are cohorts (plus a trailing test break-even row), columns rounds.
std::string cohort_csv(const CohortReport& report);

}  // namespace bseg::boot
