#include "bseg/boot/bootstrap.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "bseg/common/error.hpp"
#include "bseg/common/rng.hpp"
#include "bseg/model/trainer.hpp"

namespace bseg::boot {

using nlohmann::json;

std::vector<loss::LossRecord> score_samples(const model::Network<float>& net, const model::SampleSource& data,
                                            std::span<const std::size_t> indices, int round,
                                            const ScoreOptions& options) {
  if (options.workers < 1) throw ContractViolation("score_samples: workers must be >= 1");
  if (options.chunk < 1) throw ContractViolation("score_samples: chunk must be >= 1");
  std::string missing;
  for (const auto i : indices) {
    if (i >= data.size()) missing += (missing.empty() ? "" : ", ") + std::to_string(i);
  }
  if (!missing.empty()) throw Error("no sample data for indices: " + missing);

  const auto& spec = net.spec();
  const auto per = static_cast<std::size_t>(spec.output_side * spec.output_side);
  std::vector<loss::LossRecord> out(indices.size());
  const std::size_t chunks = (indices.size() + options.chunk - 1) / options.chunk;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto worker = [&] {
    model::Network<float> local = net;
    try {
      for (std::size_t c = next++; c < chunks; c = next++) {
        const auto part = indices.subspan(c * options.chunk, std::min(options.chunk, indices.size() - c * options.chunk));
        const auto probs = local.predict(model::gather_inputs(data, part, spec));
        const auto targets = model::gather_targets(data, part, spec);
        for (std::size_t i = 0; i < part.size(); ++i) {
          const double raw = loss::bce_loss(probs.data().subspan(i * per, per), targets.data().subspan(i * per, per));
          out[c * options.chunk + i] = loss::make_record(data.sample_id(part[i]), raw, round);
        }
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = chunks;
    }
  };
  const int threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(options.workers), chunks));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

double BootstrapManifest::subset_fraction() const {
  if (training_size == 0) throw ContractViolation("bootstrap manifest has no training size");
  return static_cast<double>(subset_size()) / static_cast<double>(training_size);
}

std::vector<std::uint32_t> BootstrapManifest::subset_ids() const {
  std::vector<std::uint32_t> out;
  out.reserve(subset_size());
  std::merge(hard.begin(), hard.end(), easy.begin(), easy.end(), std::back_inserter(out));
  return out;
}

BootstrapManifest build_subset(const loss::LossManifest& scored, std::uint64_t seed, bool include_zero_bin,
                               std::string source_ref) {
  BootstrapManifest m;
  m.round = scored.round + 1;
  m.seed = seed;
  m.include_zero_bin = include_zero_bin;
  m.source_loss_manifest = std::move(source_ref);
  m.config_hash = scored.config_hash;
  m.training_size = scored.records.size();
  std::vector<std::uint32_t> pool;
  for (const auto& r : scored.records) {
    if (r.clipped_loss > loss::kHardThreshold) {
      m.hard.push_back(r.sample_id);
    } else if (r.bin == loss::LossBin::kB1 || (include_zero_bin && r.bin == loss::LossBin::kZero)) {
      pool.push_back(r.sample_id);
    }
  }
  if (m.hard.empty()) {
    throw Error("no training sample has clipped loss > 0.2; bootstrapping would be a no-op (round " +
                std::to_string(scored.round) + " model already fits every sample)");
  }
  std::sort(m.hard.begin(), m.hard.end());
  std::sort(pool.begin(), pool.end());
  if (std::adjacent_find(m.hard.begin(), m.hard.end()) != m.hard.end() ||
      std::adjacent_find(pool.begin(), pool.end()) != pool.end()) {
    throw Error("loss manifest contains duplicate sample ids");
  }
  // Partial Fisher-Yates over the sorted pool.
  const std::size_t take = std::min(m.hard.size(), pool.size());
  Rng rng(seed);
  for (std::size_t i = 0; i < take; ++i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                        static_cast<std::int64_t>(pool.size() - 1)));
    std::swap(pool[i], pool[j]);
  }
  m.easy.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  std::sort(m.easy.begin(), m.easy.end());
  return m;
}

namespace {

constexpr std::string_view kBootstrapFormat = "bseg-bootstrap-manifest/1";

}  // namespace

std::string encode_bootstrap_manifest(const BootstrapManifest& m) {
  return json{{"format", kBootstrapFormat},
              {"round", m.round},
              {"seed", m.seed},
              {"include_zero_bin", m.include_zero_bin},
              {"source_loss_manifest", m.source_loss_manifest},
              {"config_hash", m.config_hash},
              {"training_size", m.training_size},
              {"subset_size", m.subset_size()},
              {"subset_fraction", m.training_size ? m.subset_fraction() : 0.0},
              {"hard", m.hard},
              {"easy", m.easy}}
             .dump(1) +
         "\n";
}

BootstrapManifest decode_bootstrap_manifest(std::string_view text) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != kBootstrapFormat) throw Error("unknown format");
    BootstrapManifest m;
    m.round = j.at("round").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.include_zero_bin = j.at("include_zero_bin").get<bool>();
    m.source_loss_manifest = j.at("source_loss_manifest").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.training_size = j.at("training_size").get<std::size_t>();
    m.hard = j.at("hard").get<std::vector<std::uint32_t>>();
    m.easy = j.at("easy").get<std::vector<std::uint32_t>>();
    return m;
  } catch (const std::exception& e) {
    throw Error(std::string("bootstrap manifest: ") + e.what());
  }
}

CohortReport track_cohorts(std::span<const loss::LossManifest> manifests) {
  if (manifests.empty()) throw Error("track_cohorts: no loss manifests");
  const auto& base = manifests.front();
  std::unordered_map<std::uint32_t, std::size_t> cohort_of;
  for (const auto& r : base.records) {
    if (!cohort_of.emplace(r.sample_id, loss::bin_index(r.bin)).second) {
      throw Error("track_cohorts: duplicate sample id " + std::to_string(r.sample_id));
    }
  }
  CohortReport rep;
  for (const auto& [id, c] : cohort_of) ++rep.sizes[c];
  for (const auto& m : manifests) {
    if (m.records.size() != base.records.size()) {
      throw Error("track_cohorts: round " + std::to_string(m.round) + " covers " + std::to_string(m.records.size()) +
                  " samples, round " + std::to_string(base.round) + " covers " + std::to_string(base.records.size()));
    }
    std::array<std::vector<double>, loss::kBinCount> values;
    std::unordered_map<std::uint32_t, bool> seen;
    for (const auto& r : m.records) {
      const auto it = cohort_of.find(r.sample_id);
      if (it == cohort_of.end() || !seen.emplace(r.sample_id, true).second) {
        throw Error("track_cohorts: sample id sets differ between rounds (id " + std::to_string(r.sample_id) +
                    " in round " + std::to_string(m.round) + ")");
      }
      values[it->second].push_back(r.clipped_loss);
    }
    std::array<double, loss::kBinCount> means{};
    for (std::size_t c = 0; c < loss::kBinCount; ++c) {
      auto& v = values[c];
      if (v.empty()) {
        means[c] = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      std::sort(v.begin(), v.end());
      double s = 0.0;
      for (const double x : v) s += x;
      means[c] = s / static_cast<double>(v.size());
    }
    rep.rounds.push_back(m.round);
    rep.means.push_back(means);
    rep.test_break_even.push_back(std::numeric_limits<double>::quiet_NaN());
  }
  return rep;
}

namespace {

std::string cell(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string cohort_csv(const CohortReport& rep) {
  std::string out = "cohort,size";
  for (const int r : rep.rounds) out += ",round_" + std::to_string(r);
  out += '\n';
  for (std::size_t c = 0; c < loss::kBinCount; ++c) {
    out += std::string(loss::bin_name(static_cast<loss::LossBin>(c))) + ',' + std::to_string(rep.sizes[c]);
    for (const auto& m : rep.means) out += ',' + cell(m[c]);
    out += '\n';
  }
  out += "test_break_even_0.5,";
  for (const double b : rep.test_break_even) out += ',' + cell(b);
  out += '\n';
  return out;
}

}  // namespace bseg::boot
