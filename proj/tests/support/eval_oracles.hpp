#pragma once

// Independent reference implementations shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "bseg/common/rng.hpp"
#include "bseg/data/scene.hpp"
#include "bseg/eval/evaluation.hpp"

namespace bseg::eval::oracle {

inline std::vector<std::uint8_t> random_mask(Rng& rng, int h, int w, double p) {
  std::vector<std::uint8_t> m(std::size_t(h) * w);
  for (auto& v : m) v = uniform01(rng) < p ? 1 : 0;
  return m;
}

// Recursive flood fill; labels in row-major order of first pixel.
inline void flood(const std::vector<std::uint8_t>& m, int h, int w, int y, int x, std::uint32_t label,
           std::vector<std::uint32_t>& out) {
  if (y < 0 || x < 0 || y >= h || x >= w) return;
  const std::size_t i = std::size_t(y) * w + x;
  if (!m[i] || out[i] != 0) return;
  out[i] = label;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      if (dy != 0 || dx != 0) flood(m, h, w, y + dy, x + dx, label, out);
    }
  }
}

inline std::vector<std::uint32_t> flood_fill_labels(const std::vector<std::uint8_t>& m, int h, int w) {
  std::vector<std::uint32_t> out(m.size(), 0);
  std::uint32_t next = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (m[std::size_t(y) * w + x] && out[std::size_t(y) * w + x] == 0) flood(m, h, w, y, x, ++next, out);
    }
  }
  return out;
}

// Brute force: for every pair of components count shared pixels directly.
inline PRCounts brute_force(const std::vector<float>& prob, const std::vector<std::uint8_t>& gt, int h, int w, double t,
                     double theta) {
  std::vector<std::uint8_t> fg(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) fg[i] = prob[i] >= t;
  const auto gl = flood_fill_labels(gt, h, w);
  const auto pl = flood_fill_labels(fg, h, w);
  std::map<std::uint32_t, std::pair<std::size_t, std::size_t>> gs, ps;  // label -> (size, hits)
  for (std::size_t i = 0; i < prob.size(); ++i) {
    if (gl[i]) {
      ++gs[gl[i]].first;
      gs[gl[i]].second += fg[i];
    }
    if (pl[i]) {
      ++ps[pl[i]].first;
      ps[pl[i]].second += gt[i];
    }
  }
  PRCounts c;
  for (const auto& [l, v] : gs) {
    ++c.total_gt;
    c.detected += double(v.second) >= theta * double(v.first);
  }
  for (const auto& [l, v] : ps) {
    ++c.total_pred;
    c.correct += double(v.second) >= theta * double(v.first);
  }
  return c;
}

inline EvalScene noisy_scene(std::uint64_t seed) {
  Rng rng(seed);
  const auto s = data::generate_scene(0, seed, 160, 160, data::SceneParams{});
  EvalScene e{{160, 160, {}}, s.gt};
  for (const auto v : s.gt) {
    const double base = v ? 0.7 : 0.3;
    e.prob.values.push_back(static_cast<float>(std::clamp(base + normal(rng, 0.0, 0.25), 0.0, 1.0)));
  }
  return e;
}

inline PRPoint pt(double t, double p, double r) {
  PRPoint x;
  x.threshold = t;
  x.overlap = 0.5;
  x.precision = p;
  x.recall = r;
  return x;
}

// Dense sweep of the piecewise-linear curve through the grid points.
inline double dense_sweep(const std::vector<PRPoint>& c, int samples) {
  const auto at = [&](double t, double& p, double& r) {
    auto hi = std::upper_bound(c.begin(), c.end(), t, [](double v, const PRPoint& q) { return v < q.threshold; });
    if (hi == c.begin()) hi = std::next(hi);
    if (hi == c.end()) hi = std::prev(hi);
    const auto lo = std::prev(hi);
    const double a = (t - lo->threshold) / (hi->threshold - lo->threshold);
    p = lo->precision + a * (hi->precision - lo->precision);
    r = lo->recall + a * (hi->recall - lo->recall);
  };
  const double t0 = c.front().threshold, t1 = c.back().threshold;
  double pp = 0, pr = 0;
  at(t0, pp, pr);
  for (int i = 1; i <= samples; ++i) {
    const double t = t0 + (t1 - t0) * i / samples;
    double p, r;
    at(t, p, r);
    if ((pp - pr < 0) != (p - r < 0) || p == r) {
      // Bracket found; bisect on the exact interpolant.
      double lo = t0 + (t1 - t0) * (i - 1) / samples, hi = t;
      const bool lo_negative = pp - pr < 0;
      for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        double pm, rm;
        at(mid, pm, rm);
        ((pm - rm < 0) == lo_negative ? lo : hi) = mid;
      }
      at(hi, p, r);
      return 0.5 * (p + r);
    }
    pp = p;
    pr = r;
  }
  return std::nan("");
}

}  // namespace bseg::eval::oracle
