#include "bseg/loss/binning.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bseg/common/error.hpp"

namespace bseg::loss {

namespace {

template <typename T>
double bce_impl(std::span<const T> predictions, std::span<const T> targets) {
  if (predictions.size() != targets.size() || predictions.empty()) {
    throw ContractViolation("bce_loss: " + std::to_string(predictions.size()) + " predictions vs " +
                            std::to_string(targets.size()) + " targets");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    // Each log argument is floored separately, so an exact 0/1 prediction of
    // a 0/1 target scores exactly zero.
    const double p = predictions[i];
    const double y = targets[i];
    if (y != 0.0) s += y * std::log(std::max(p, kProbabilityClamp));
    if (y != 1.0) s += (1.0 - y) * std::log(std::max(1.0 - p, kProbabilityClamp));
  }
  return std::max(0.0, -s / static_cast<double>(predictions.size()));
}

}  // namespace

std::string_view bin_name(LossBin bin) {
  static constexpr std::string_view kNames[] = {"ZERO", "B1", "B2", "B3", "B4", "B5"};
  return kNames[bin_index(bin)];
}

LossBin parse_bin(std::string_view name) {
  for (std::size_t i = 0; i < kBinCount; ++i) {
    if (bin_name(static_cast<LossBin>(i)) == name) return static_cast<LossBin>(i);
  }
  throw Error("unknown loss bin '" + std::string(name) + "'");
}

double bce_loss(std::span<const float> predictions, std::span<const float> targets) {
  return bce_impl(predictions, targets);
}

double bce_loss(std::span<const double> predictions, std::span<const double> targets) {
  return bce_impl(predictions, targets);
}

double clip_loss(double raw_loss) { return std::min(raw_loss, 1.0); }

LossBin assign_bin(double raw_loss) {
  if (!(raw_loss >= 0.0)) throw ContractViolation("assign_bin: loss must be non-negative and finite-or-inf");
  const double c = clip_loss(raw_loss);
  if (c <= kZeroEpsilon) return LossBin::kZero;
  static constexpr double kUpper[] = {0.2, 0.4, 0.6, 0.8};
  for (std::size_t i = 0; i < std::size(kUpper); ++i) {
    if (c <= kUpper[i]) return static_cast<LossBin>(i + 1);
  }
  return LossBin::kB5;
}

LossRecord make_record(std::uint32_t sample_id, double raw_loss, int round) {
  return {sample_id, raw_loss, clip_loss(raw_loss), assign_bin(raw_loss), round};
}

BinHistogram histogram(std::span<const LossRecord> records) {
  if (records.empty()) throw Error("histogram: no loss records");
  BinHistogram h;
  h.round = records.front().round;
  std::array<std::vector<double>, kBinCount> values;
  for (const auto& r : records) values[bin_index(r.bin)].push_back(r.clipped_loss);
  for (std::size_t b = 0; b < kBinCount; ++b) {
    auto& v = values[b];
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    h.counts[b] = v.size();
    h.means[b] = v.empty() ? 0.0 : s / static_cast<double>(v.size());
    h.total += v.size();
  }
  return h;
}

}  // namespace bseg::loss
