#include "bseg/data/tiling.hpp"

#include <algorithm>

#include "bseg/common/error.hpp"

namespace bseg::data {

void PatchGeometry::validate() const {
  if (input_side <= 0 || output_side <= 0 || stride <= 0) throw ContractViolation("patch geometry must be positive");
  if (output_side > input_side || (input_side - output_side) % 2 != 0) {
    throw ContractViolation("output window must be centered in the input window");
  }
  if (stride > output_side) throw ContractViolation("stride must not exceed output_side");
}

std::vector<PatchOrigin> patch_grid(int height, int width, const PatchGeometry& g) {
  g.validate();
  if (height < g.input_side || width < g.input_side) {
    throw Error("scene " + std::to_string(height) + "x" + std::to_string(width) + " is smaller than one " +
                std::to_string(g.input_side) + "-pixel input window");
  }
  std::vector<PatchOrigin> out;
  for (int y = 0; y + g.output_side <= height; y += g.stride) {
    for (int x = 0; x + g.output_side <= width; x += g.stride) out.push_back({y, x});
  }
  return out;
}

float normalize_depth(float meters, const NormalizeParams& params) {
  const double d = std::clamp(static_cast<double>(meters), 0.0, params.depth_max);
  return static_cast<float>(d / params.depth_max - 0.5);
}

namespace {

// Reflect-101 index into [0, n).
int reflect(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

}  // namespace

PaddedScene pad_scene(const RasterScene& s, const PatchGeometry& g, const NormalizeParams& norm) {
  g.validate();
  if (!(norm.depth_max > 0.0)) throw ContractViolation("depth_max must be positive");
  PaddedScene p;
  p.scene_id = s.id;
  p.height = s.height;
  p.width = s.width;
  p.pad = g.margin();
  if (p.pad >= std::min(s.height, s.width)) throw Error("scene too small for mirror padding");
  const int ph = p.padded_height(), pw = p.padded_width();
  const std::size_t plane = std::size_t(ph) * pw;
  p.planes.resize(4 * plane);
  for (int y = 0; y < ph; ++y) {
    const int sy = reflect(y - p.pad, s.height);
    for (int x = 0; x < pw; ++x) {
      const int sx = reflect(x - p.pad, s.width);
      const std::size_t src = std::size_t(sy) * s.width + sx;
      const std::size_t dst = std::size_t(y) * pw + x;
      for (int c = 0; c < 3; ++c) p.planes[c * plane + dst] = normalize_rgb(s.rgb[3 * src + c]);
      p.planes[3 * plane + dst] = normalize_depth(s.depth[src], norm);
    }
  }
  p.gt = s.gt;
  return p;
}

void extract_input(const PaddedScene& s, const PatchGeometry& g, PatchOrigin o, std::span<float> out) {
  const int side = g.input_side;
  if (out.size() != 4 * std::size_t(side) * side) throw ContractViolation("extract_input: wrong output size");
  // Padded coordinates of the input window: (o - margin) + pad == o when pad == margin.
  const int y0 = o.y - g.margin() + s.pad, x0 = o.x - g.margin() + s.pad;
  if (y0 < 0 || x0 < 0 || y0 + side > s.padded_height() || x0 + side > s.padded_width()) {
    throw ContractViolation("extract_input: window outside padded scene");
  }
  const std::size_t plane = std::size_t(s.padded_height()) * s.padded_width();
  for (int c = 0; c < 4; ++c) {
    for (int y = 0; y < side; ++y) {
      const float* row = s.planes.data() + c * plane + std::size_t(y0 + y) * s.padded_width() + x0;
      std::copy(row, row + side, out.begin() + (std::size_t(c) * side + y) * side);
    }
  }
}

void extract_target(const PaddedScene& s, const PatchGeometry& g, PatchOrigin o, std::span<float> out) {
  const int side = g.output_side;
  if (out.size() != std::size_t(side) * side) throw ContractViolation("extract_target: wrong output size");
  if (o.y < 0 || o.x < 0 || o.y + side > s.height || o.x + side > s.width) {
    throw ContractViolation("extract_target: window outside scene");
  }
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      out[std::size_t(y) * side + x] = s.gt[std::size_t(o.y + y) * s.width + o.x + x] ? 1.0f : 0.0f;
    }
  }
}

std::vector<PatchSample> tile_scene(const RasterScene& scene, const PatchGeometry& g, std::uint32_t first_id,
                                    const NormalizeParams& norm) {
  const auto grid = patch_grid(scene.height, scene.width, g);
  const auto padded = pad_scene(scene, g, norm);
  std::vector<PatchSample> out;
  out.reserve(grid.size());
  for (const auto& o : grid) {
    PatchSample s;
    s.sample_id = first_id++;
    s.scene_id = scene.id;
    s.origin = o;
    s.input.resize(4 * std::size_t(g.input_side) * g.input_side);
    s.target.resize(std::size_t(g.output_side) * g.output_side);
    extract_input(padded, g, o, s.input);
    extract_target(padded, g, o, s.target);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace bseg::data
