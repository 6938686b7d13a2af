#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bseg/data/tiling.hpp"

namespace bseg::eval {

struct ProbabilityRaster {
  int height = 0;
  int width = 0;
  std::vector<float> values;  // row-major
};

struct PatchPrediction {
  data::PatchOrigin origin;
  std::vector<float> values;  // side x side
};

// Places side x side windows into a height x width raster. Every pixel must
// be covered exactly once; gaps, overlaps and out-of-bounds windows throw
// Error.
ProbabilityRaster stitch(std::span<const PatchPrediction> patches, int height, int width, int side);

struct ComponentLabeling {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> labels;  // 0 = background, else 1..count
  std::uint32_t count = 0;
  std::vector<std::size_t> sizes;  // sizes[l - 1] = pixels of label l
};

// 8-connected labeling via union-find. Labels are numbered in row-major
// order of each component's first pixel.
ComponentLabeling connected_components(std::span<const std::uint8_t> mask, int height, int width);

struct PRCounts {
  std::size_t detected = 0;   // GT components with >= overlap of their pixels predicted
  std::size_t total_gt = 0;
  std::size_t correct = 0;    // predicted components with >= overlap of their pixels on GT
  std::size_t total_pred = 0;

  PRCounts& operator+=(const PRCounts& o);
  friend bool operator==(const PRCounts&, const PRCounts&) = default;
};

struct PRPoint {
  double threshold = 0.0;
  double overlap = 0.0;
  PRCounts counts;
  double precision = 1.0;  // 1 when nothing is predicted
  double recall = 0.0;     // 0 when there is no GT building

  friend bool operator==(const PRPoint&, const PRPoint&) = default;
};

PRPoint make_point(double threshold, double overlap, const PRCounts& counts);

// True iff intersect >= overlap * size.
bool overlap_reached(std::size_t intersect, std::size_t size, double overlap);

// Foreground = prob >= threshold. Components smaller than min_component
// pixels are ignored on both sides.
PRCounts count_at_threshold(std::span<const float> prob, std::span<const std::uint8_t> gt, int height, int width,
                            double threshold, double overlap, std::size_t min_component = 0);
PRPoint pr_at_threshold(const ProbabilityRaster& prob, std::span<const std::uint8_t> gt, double threshold,
                        double overlap, std::size_t min_component = 0);

struct EvalScene {
  ProbabilityRaster prob;
  std::vector<std::uint8_t> gt;  // same dims, 0/1
};

// 0.01, 0.02, ..., 0.99
std::vector<double> default_threshold_grid();

// Micro-averaged curves: counts are summed over scenes before P and R are
// formed. Returns one curve per overlap, each with one point per threshold.
std::vector<std::vector<PRPoint>> pr_curves(std::span<const EvalScene> scenes, std::span<const double> overlaps,
                                            std::span<const double> thresholds, std::size_t min_component = 0);
std::vector<PRPoint> pr_curve(std::span<const EvalScene> scenes, double overlap, std::span<const double> thresholds,
                              std::size_t min_component = 0);

struct BreakEvenResult {
  double overlap = 0.0;
  double value = 0.0;
  double threshold_lo = 0.0;  // bracketing thresholds (equal when not interpolated)
  double threshold_hi = 0.0;
  bool interpolated = false;
  // False when P and R never cross; value is then (P+R)/2 at min |P-R|.
  bool crossed = true;
};

// Exact P == R grid point first, then the first sign change of P - R with
// linear interpolation, else the closest point. Empty curve -> Error.
BreakEvenResult break_even(std::span<const PRPoint> curve);

inline constexpr double kReportOverlaps[] = {0.25, 0.5, 0.75, 0.9};

struct EvalReport {
  std::vector<std::vector<PRPoint>> curves;  // one per overlap
  std::vector<BreakEvenResult> break_even;

  const BreakEvenResult& at_overlap(double overlap) const;
};

EvalReport evaluate(std::span<const EvalScene> scenes, std::span<const double> overlaps,
                    std::span<const double> thresholds, std::size_t min_component = 0);

// overlap,threshold,precision,recall,detected,total_gt,correct,total_pred
std::string curves_csv(const EvalReport& report);
// overlap,break_even,threshold_lo,threshold_hi,interpolated,crossed
std::string break_even_csv(const EvalReport& report);

}  // namespace bseg::eval
