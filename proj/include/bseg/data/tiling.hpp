#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bseg/data/scene.hpp"

namespace bseg::data {

// Input window of input_side around an output window of output_side,
// centered: margin = (input_side - output_side) / 2 on every side.
struct PatchGeometry {
  int input_side = 80;
  int output_side = 24;
  int stride = 24;

  int margin() const { return (input_side - output_side) / 2; }
  void validate() const;
  friend bool operator==(const PatchGeometry&, const PatchGeometry&) = default;
};

// Top-left corner of an output window in scene coordinates.
struct PatchOrigin {
  int y = 0;
  int x = 0;
  friend bool operator==(const PatchOrigin&, const PatchOrigin&) = default;
};

// Output windows stepping by stride from (0, 0) while they fit; the tiled
// interior is the top-left floor-aligned region. Row-major order. Throws
// Error if the scene is smaller than one input window.
std::vector<PatchOrigin> patch_grid(int height, int width, const PatchGeometry& geometry);

struct NormalizeParams {
  double depth_max = 30.0;  // meters; deeper values saturate
};

// value/255 - 0.5
inline float normalize_rgb(std::uint8_t v) { return static_cast<float>(v) / 255.0f - 0.5f; }
// clamp(d, 0, depth_max)/depth_max - 0.5
float normalize_depth(float meters, const NormalizeParams& params = {});

// Normalized R,G,B,D planes, mirror-padded (reflect-101: the edge pixel is
// not repeated) by the geometry margin on every side.
struct PaddedScene {
  std::uint32_t scene_id = 0;
  int height = 0;  // unpadded
  int width = 0;
  int pad = 0;
  std::vector<float> planes;    // 4 x (H+2p) x (W+2p)
  std::vector<std::uint8_t> gt;  // H x W, 0/1

  int padded_width() const { return width + 2 * pad; }
  int padded_height() const { return height + 2 * pad; }
};

PaddedScene pad_scene(const RasterScene& scene, const PatchGeometry& geometry, const NormalizeParams& norm = {});

// 4 x input_side x input_side, channels R,G,B,D.
void extract_input(const PaddedScene& scene, const PatchGeometry& geometry, PatchOrigin origin, std::span<float> out);
// output_side x output_side binary target.
void extract_target(const PaddedScene& scene, const PatchGeometry& geometry, PatchOrigin origin,
                    std::span<float> out);

struct PatchSample {
  std::uint32_t sample_id = 0;
  std::uint32_t scene_id = 0;
  PatchOrigin origin;
  std::vector<float> input;
  std::vector<float> target;
};

// Materializes every patch of a scene; ids run from first_id upwards.
std::vector<PatchSample> tile_scene(const RasterScene& scene, const PatchGeometry& geometry = {},
                                    std::uint32_t first_id = 0, const NormalizeParams& norm = {});

}  // namespace bseg::data
