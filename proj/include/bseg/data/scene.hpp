#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace bseg::data {

// Knobs of the synthetic RGB-D aerial-scene generator. Lengths in pixels,
// heights in meters, colors in 8-bit units.
struct SceneParams {
  double density = 0.2;  // target fraction of building pixels, [0, 0.6]
  int min_building = 10;
  int max_building = 36;
  double min_height = 3.0;
  double max_height = 18.0;
  double l_shape_fraction = 0.35;
  // Probability that a placed structure is hard: a low-contrast, low roof or
  // a tree occluder (depth > 0, not a building). Split evenly between both.
  double hard_fraction = 0.3;
  double shadow_strength = 0.45;  // fraction of brightness removed in shadow
  double rgb_noise = 5.0;         // per-pixel Gaussian sd
  double depth_noise = 0.15;      // per-pixel Gaussian sd, meters
  int max_retries = 400;          // consecutive failed placements before giving up

  void validate() const;
};

struct SceneStats {
  std::uint32_t buildings = 0;   // includes hard roofs
  std::uint32_t hard_roofs = 0;
  std::uint32_t trees = 0;

  std::uint32_t hard_structures() const { return hard_roofs + trees; }
  std::uint32_t structures() const { return buildings + trees; }
};

struct RasterScene {
  std::uint32_t id = 0;
  std::uint64_t seed = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  // H*W*3, interleaved, row-major
  std::vector<float> depth;       // H*W, meters above ground
  std::vector<std::uint8_t> gt;   // H*W, 0/1
  SceneStats stats;

  std::size_t pixels() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
};

inline constexpr int kMinSceneSide = 160;

// Pure function of (id, seed, dims, params). Throws Error if the requested
// density cannot be reached within the retry budget.
RasterScene generate_scene(std::uint32_t id, std::uint64_t seed, int height, int width, const SceneParams& params);

// One directory per scene: rgb.png, depth.f32, gt.png (0/255).
void write_scene(const std::filesystem::path& dir, const RasterScene& scene);
RasterScene read_scene(const std::filesystem::path& dir, std::uint32_t id, std::uint64_t seed);

// depth.f32: "BSEGDEP1", u32 H, u32 W, then H*W little-endian float32.
std::vector<char> encode_depth(int height, int width, const std::vector<float>& depth);
std::vector<float> decode_depth(std::span<const char> bytes, int& height, int& width);

}  // namespace bseg::data
