#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace bseg::loss {

inline constexpr double kProbabilityClamp = 1e-7;
inline constexpr double kZeroEpsilon = 1e-7;
inline constexpr double kBinStep = 0.2;
inline constexpr double kHardThreshold = 0.2;
inline constexpr std::size_t kBinCount = 6;

// [0], (0,0.2], (0.2,0.4], (0.4,0.6], (0.6,0.8], (0.8,1.0]
enum class LossBin : std::uint8_t { kZero = 0, kB1, kB2, kB3, kB4, kB5 };

std::string_view bin_name(LossBin bin);  // "ZERO", "B1".."B5"
LossBin parse_bin(std::string_view name);
constexpr std::size_t bin_index(LossBin b) { return static_cast<std::size_t>(b); }

// Pixel-averaged binary cross-entropy in nats. The arguments of both logs
// are floored at 1e-7; targets are 0/1 (soft labels accepted).
double bce_loss(std::span<const float> predictions, std::span<const float> targets);
double bce_loss(std::span<const double> predictions, std::span<const double> targets);

// min(raw, 1). Raw cross-entropy is unbounded; the binning range is [0, 1].
double clip_loss(double raw_loss);

// Clip, then map onto the half-open bins. Negative input is a contract
// violation; upper boundaries belong to the lower bin (0.2 -> B1).
LossBin assign_bin(double raw_loss);

struct LossRecord {
  std::uint32_t sample_id = 0;
  double raw_loss = 0.0;
  double clipped_loss = 0.0;
  LossBin bin = LossBin::kZero;
  int round = 0;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

LossRecord make_record(std::uint32_t sample_id, double raw_loss, int round);

struct BinHistogram {
  std::array<std::size_t, kBinCount> counts{};
  // Mean clipped loss per bin; 0 for an empty bin.
  std::array<double, kBinCount> means{};
  std::size_t total = 0;
  int round = 0;
};

// Order-independent: per-bin sums run over sorted values.
BinHistogram histogram(std::span<const LossRecord> records);

}  // namespace bseg::loss
