#include "bseg/eval/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "bseg/common/error.hpp"

namespace bseg::eval {

ProbabilityRaster stitch(std::span<const PatchPrediction> patches, int height, int width, int side) {
  if (height <= 0 || width <= 0 || side <= 0) throw ContractViolation("stitch: dimensions must be positive");
  ProbabilityRaster r{height, width, std::vector<float>(std::size_t(height) * width, 0.0f)};
  std::vector<std::uint8_t> hits(r.values.size(), 0);
  for (const auto& p : patches) {
    if (p.values.size() != std::size_t(side) * side) throw ContractViolation("stitch: patch has wrong size");
    if (p.origin.y < 0 || p.origin.x < 0 || p.origin.y + side > height || p.origin.x + side > width) {
      throw Error("stitch: patch at (" + std::to_string(p.origin.y) + "," + std::to_string(p.origin.x) +
                  ") extends outside the " + std::to_string(height) + "x" + std::to_string(width) + " raster");
    }
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        const std::size_t i = std::size_t(p.origin.y + y) * width + p.origin.x + x;
        if (hits[i]++ != 0) {
          throw Error("stitch: pixel (" + std::to_string(p.origin.y + y) + "," + std::to_string(p.origin.x + x) +
                      ") covered twice");
        }
        r.values[i] = p.values[std::size_t(y) * side + x];
      }
    }
  }
  const auto gap = std::find(hits.begin(), hits.end(), 0);
  if (gap != hits.end()) {
    const auto i = static_cast<std::size_t>(gap - hits.begin());
    throw Error("stitch: pixel (" + std::to_string(i / width) + "," + std::to_string(i % width) + ") not covered");
  }
  return r;
}

namespace {

std::uint32_t find_root(std::vector<std::uint32_t>& parent, std::uint32_t a) {
  while (parent[a] != a) {
    parent[a] = parent[parent[a]];
    a = parent[a];
  }
  return a;
}

void unite(std::vector<std::uint32_t>& parent, std::uint32_t a, std::uint32_t b) {
  a = find_root(parent, a);
  b = find_root(parent, b);
  if (a == b) return;
  // Smaller provisional label wins, so roots are the earliest pixels.
  if (a < b) {
    parent[b] = a;
  } else {
    parent[a] = b;
  }
}

}  // namespace

ComponentLabeling connected_components(std::span<const std::uint8_t> mask, int height, int width) {
  if (height < 0 || width < 0 || mask.size() != std::size_t(height) * std::size_t(width)) {
    throw ContractViolation("connected_components: mask size does not match dimensions");
  }
  ComponentLabeling out;
  out.height = height;
  out.width = width;
  out.labels.assign(mask.size(), 0);
  // First pass: provisional labels, in row-major order of first pixel.
  std::vector<std::uint32_t> parent{0};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t i = std::size_t(y) * width + x;
      if (mask[i] > 1) throw ContractViolation("connected_components: mask values must be 0/1");
      if (!mask[i]) continue;
      std::uint32_t label = 0;
      const auto visit = [&](int yy, int xx) {
        if (yy < 0 || xx < 0 || xx >= width) return;
        const std::uint32_t l = out.labels[std::size_t(yy) * width + xx];
        if (l == 0) return;
        if (label == 0) {
          label = l;
        } else {
          unite(parent, label, l);
        }
      };
      visit(y, x - 1);
      visit(y - 1, x - 1);
      visit(y - 1, x);
      visit(y - 1, x + 1);
      if (label == 0) {
        label = static_cast<std::uint32_t>(parent.size());
        parent.push_back(label);
      }
      out.labels[i] = label;
    }
  }
  // Second pass: compact roots into 1..count by first appearance.
  std::vector<std::uint32_t> final_label(parent.size(), 0);
  for (auto& l : out.labels) {
    if (l == 0) continue;
    const std::uint32_t root = find_root(parent, l);
    if (final_label[root] == 0) {
      final_label[root] = ++out.count;
      out.sizes.push_back(0);
    }
    l = final_label[root];
    ++out.sizes[l - 1];
  }
  return out;
}

PRCounts& PRCounts::operator+=(const PRCounts& o) {
  detected += o.detected;
  total_gt += o.total_gt;
  correct += o.correct;
  total_pred += o.total_pred;
  return *this;
}

PRPoint make_point(double threshold, double overlap, const PRCounts& c) {
  PRPoint p;
  p.threshold = threshold;
  p.overlap = overlap;
  p.counts = c;
  p.precision = c.total_pred == 0 ? 1.0 : double(c.correct) / double(c.total_pred);
  p.recall = c.total_gt == 0 ? 0.0 : double(c.detected) / double(c.total_gt);
  return p;
}

bool overlap_reached(std::size_t intersect, std::size_t size, double overlap) {
  return static_cast<double>(intersect) >= overlap * static_cast<double>(size);
}

namespace {

void check_overlap(double overlap) {
  if (!(overlap > 0.0 && overlap <= 1.0)) throw ContractViolation("overlap must lie in (0, 1]");
}

void check_threshold(double t) {
  if (!(t > 0.0 && t < 1.0)) throw ContractViolation("threshold must lie in (0, 1)");
}

// Per-component intersection counts of one labeling against a binary mask.
std::vector<std::size_t> intersections(const ComponentLabeling& lab, std::span<const std::uint8_t> other) {
  std::vector<std::size_t> hits(lab.count, 0);
  for (std::size_t i = 0; i < lab.labels.size(); ++i) {
    if (lab.labels[i] != 0 && other[i]) ++hits[lab.labels[i] - 1];
  }
  return hits;
}

// Precomputed GT side of one scene: per GT component, the sorted predicted
// probabilities of its pixels, so recall at any threshold is a binary search.
struct GtIndex {
  ComponentLabeling labels;
  std::vector<std::vector<float>> probs;
};

GtIndex index_gt(std::span<const float> prob, std::span<const std::uint8_t> gt, int height, int width) {
  GtIndex g;
  g.labels = connected_components(gt, height, width);
  g.probs.resize(g.labels.count);
  for (std::uint32_t c = 0; c < g.labels.count; ++c) g.probs[c].reserve(g.labels.sizes[c]);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (g.labels.labels[i] != 0) g.probs[g.labels.labels[i] - 1].push_back(prob[i]);
  }
  for (auto& v : g.probs) std::sort(v.begin(), v.end());
  return g;
}

// Counts at one threshold for several overlaps at once.
void accumulate_threshold(const GtIndex& g, std::span<const float> prob, std::span<const std::uint8_t> gt, int height,
                          int width, double threshold, std::span<const double> overlaps, std::size_t min_component,
                          std::vector<PRCounts>& out) {
  std::vector<std::uint8_t> fg(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) fg[i] = prob[i] >= threshold ? 1 : 0;
  const auto pred = connected_components(fg, height, width);
  const auto pred_hits = intersections(pred, gt);
  for (std::size_t k = 0; k < overlaps.size(); ++k) {
    PRCounts c;
    for (std::uint32_t comp = 0; comp < g.labels.count; ++comp) {
      const std::size_t size = g.labels.sizes[comp];
      if (size < min_component) continue;
      ++c.total_gt;
      const auto& v = g.probs[comp];
      // Pixels with prob >= threshold, matching the foreground rule.
      const auto above = static_cast<std::size_t>(
          v.end() - std::lower_bound(v.begin(), v.end(), threshold,
                                     [](float p, double t) { return static_cast<double>(p) < t; }));
      if (overlap_reached(above, size, overlaps[k])) ++c.detected;
    }
    for (std::uint32_t comp = 0; comp < pred.count; ++comp) {
      if (pred.sizes[comp] < min_component) continue;
      ++c.total_pred;
      if (overlap_reached(pred_hits[comp], pred.sizes[comp], overlaps[k])) ++c.correct;
    }
    out[k] += c;
  }
}

void check_scene(std::span<const float> prob, std::span<const std::uint8_t> gt, int height, int width) {
  if (prob.size() != std::size_t(height) * std::size_t(width) || gt.size() != prob.size()) {
    throw ContractViolation("prediction and ground truth rasters differ in shape");
  }
}

}  // namespace

PRCounts count_at_threshold(std::span<const float> prob, std::span<const std::uint8_t> gt, int height, int width,
                            double threshold, double overlap, std::size_t min_component) {
  check_scene(prob, gt, height, width);
  check_threshold(threshold);
  check_overlap(overlap);
  const auto g = index_gt(prob, gt, height, width);
  std::vector<PRCounts> out(1);
  const double overlaps[] = {overlap};
  accumulate_threshold(g, prob, gt, height, width, threshold, overlaps, min_component, out);
  return out[0];
}

PRPoint pr_at_threshold(const ProbabilityRaster& prob, std::span<const std::uint8_t> gt, double threshold,
                        double overlap, std::size_t min_component) {
  return make_point(threshold, overlap,
                    count_at_threshold(prob.values, gt, prob.height, prob.width, threshold, overlap, min_component));
}

std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 99; ++i) g.push_back(i / 100.0);
  return g;
}

std::vector<std::vector<PRPoint>> pr_curves(std::span<const EvalScene> scenes, std::span<const double> overlaps,
                                            std::span<const double> thresholds, std::size_t min_component) {
  if (thresholds.empty()) throw ContractViolation("threshold grid must be nonempty");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    check_threshold(thresholds[i]);
    if (i > 0 && !(thresholds[i] > thresholds[i - 1])) {
      throw ContractViolation("threshold grid must be strictly increasing");
    }
  }
  for (const double o : overlaps) check_overlap(o);
  // counts[t][k]
  std::vector<std::vector<PRCounts>> counts(thresholds.size(), std::vector<PRCounts>(overlaps.size()));
  for (const auto& s : scenes) {
    check_scene(s.prob.values, s.gt, s.prob.height, s.prob.width);
    const auto g = index_gt(s.prob.values, s.gt, s.prob.height, s.prob.width);
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      accumulate_threshold(g, s.prob.values, s.gt, s.prob.height, s.prob.width, thresholds[t], overlaps,
                           min_component, counts[t]);
    }
  }
  std::vector<std::vector<PRPoint>> curves(overlaps.size());
  for (std::size_t k = 0; k < overlaps.size(); ++k) {
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      curves[k].push_back(make_point(thresholds[t], overlaps[k], counts[t][k]));
    }
  }
  return curves;
}

std::vector<PRPoint> pr_curve(std::span<const EvalScene> scenes, double overlap, std::span<const double> thresholds,
                              std::size_t min_component) {
  const double overlaps[] = {overlap};
  return pr_curves(scenes, overlaps, thresholds, min_component)[0];
}

BreakEvenResult break_even(std::span<const PRPoint> curve) {
  if (curve.empty()) throw Error("break_even: empty precision-recall curve");
  BreakEvenResult r;
  r.overlap = curve.front().overlap;
  for (const auto& p : curve) {
    if (p.precision == p.recall) {
      r.value = p.precision;
      r.threshold_lo = r.threshold_hi = p.threshold;
      return r;
    }
  }
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto& a = curve[i - 1];
    const auto& b = curve[i];
    const double da = a.precision - a.recall, db = b.precision - b.recall;
    if ((da < 0.0) != (db < 0.0)) {
      const double alpha = da / (da - db);
      const double p = a.precision + alpha * (b.precision - a.precision);
      const double q = a.recall + alpha * (b.recall - a.recall);
      r.value = 0.5 * (p + q);
      r.threshold_lo = a.threshold;
      r.threshold_hi = b.threshold;
      r.interpolated = true;
      return r;
    }
  }
  const auto best = std::min_element(curve.begin(), curve.end(), [](const PRPoint& a, const PRPoint& b) {
    return std::abs(a.precision - a.recall) < std::abs(b.precision - b.recall);
  });
  r.value = 0.5 * (best->precision + best->recall);
  r.threshold_lo = r.threshold_hi = best->threshold;
  r.crossed = false;
  return r;
}

const BreakEvenResult& EvalReport::at_overlap(double overlap) const {
  for (const auto& b : break_even) {
    if (b.overlap == overlap) return b;
  }
  throw Error("evaluation report has no overlap " + std::to_string(overlap));
}

EvalReport evaluate(std::span<const EvalScene> scenes, std::span<const double> overlaps,
                    std::span<const double> thresholds, std::size_t min_component) {
  EvalReport r;
  r.curves = pr_curves(scenes, overlaps, thresholds, min_component);
  for (const auto& c : r.curves) r.break_even.push_back(break_even(c));
  return r;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string curves_csv(const EvalReport& report) {
  std::string out = "overlap,threshold,precision,recall,detected,total_gt,correct,total_pred\n";
  for (const auto& curve : report.curves) {
    for (const auto& p : curve) {
      out += fmt(p.overlap) + ',' + fmt(p.threshold) + ',' + fmt(p.precision) + ',' + fmt(p.recall) + ',' +
             std::to_string(p.counts.detected) + ',' + std::to_string(p.counts.total_gt) + ',' +
             std::to_string(p.counts.correct) + ',' + std::to_string(p.counts.total_pred) + '\n';
    }
  }
  return out;
}

std::string break_even_csv(const EvalReport& report) {
  std::string out = "overlap,break_even,threshold_lo,threshold_hi,interpolated,crossed\n";
  for (const auto& b : report.break_even) {
    out += fmt(b.overlap) + ',' + fmt(b.value) + ',' + fmt(b.threshold_lo) + ',' + fmt(b.threshold_hi) + ',' +
           (b.interpolated ? "1" : "0") + ',' + (b.crossed ? "1" : "0") + '\n';
  }
  return out;
}

}  // namespace bseg::eval
