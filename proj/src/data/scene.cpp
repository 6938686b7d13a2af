#include "bseg/data/scene.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

#include "bseg/common/bytes.hpp"
#include "bseg/common/error.hpp"
#include "bseg/common/rng.hpp"

namespace bseg::data {

namespace {

using Color = std::array<double, 3>;

constexpr Color kGrass{88, 118, 62};
constexpr Color kSoil{140, 126, 102};
constexpr Color kAsphalt{96, 96, 102};
constexpr Color kTree{52, 96, 46};
constexpr std::array<Color, 5> kRoofs{{{160, 70, 54}, {118, 58, 46}, {70, 73, 80}, {182, 176, 164}, {112, 92, 72}}};
constexpr double kShadowPixelsPerMeter = 0.6;
constexpr int kGap = 3;

Color lerp(const Color& a, const Color& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

Color jitter(const Color& c, Rng& rng, double amount) {
  return {c[0] + uniform(rng, -amount, amount), c[1] + uniform(rng, -amount, amount),
          c[2] + uniform(rng, -amount, amount)};
}

struct Canvas {
  int h, w;
  std::vector<Color> color;
  std::vector<double> height;
  std::vector<std::uint8_t> gt;
  std::vector<std::int32_t> owner;  // structure index + 1; 0 = ground

  Canvas(int h_, int w_)
      : h(h_), w(w_), color(std::size_t(h_) * w_), height(std::size_t(h_) * w_, 0.0),
        gt(std::size_t(h_) * w_, 0), owner(std::size_t(h_) * w_, 0) {}
  std::size_t at(int y, int x) const { return std::size_t(y) * w + x; }
};

void paint_ground(Canvas& c, Rng& rng) {
  // Bilinear value noise on a 32-pixel lattice blends grass and bare soil.
  const int cell = 32;
  const int gh = c.h / cell + 2, gw = c.w / cell + 2;
  std::vector<double> lattice(std::size_t(gh) * gw);
  for (auto& v : lattice) v = uniform01(rng);
  for (int y = 0; y < c.h; ++y) {
    const double fy = double(y) / cell;
    const int y0 = int(fy);
    const double ty = fy - y0;
    for (int x = 0; x < c.w; ++x) {
      const double fx = double(x) / cell;
      const int x0 = int(fx);
      const double tx = fx - x0;
      const auto L = [&](int yy, int xx) { return lattice[std::size_t(yy) * gw + xx]; };
      const double t = (1 - ty) * ((1 - tx) * L(y0, x0) + tx * L(y0, x0 + 1)) +
                       ty * ((1 - tx) * L(y0 + 1, x0) + tx * L(y0 + 1, x0 + 1));
      c.color[c.at(y, x)] = lerp(kGrass, kSoil, t);
    }
  }
  const int roads = static_cast<int>(uniform_int(rng, 1, 3));
  for (int r = 0; r < roads; ++r) {
    const bool horizontal = uniform01(rng) < 0.5;
    const int width = static_cast<int>(uniform_int(rng, 6, 12));
    const int extent = horizontal ? c.h : c.w;
    const int offset = static_cast<int>(uniform_int(rng, 0, extent - width));
    for (int a = offset; a < offset + width; ++a) {
      for (int b = 0; b < (horizontal ? c.w : c.h); ++b) {
        c.color[horizontal ? c.at(a, b) : c.at(b, a)] = kAsphalt;
      }
    }
  }
}

struct Footprint {
  int y0, x0, h, w;
  // L-shapes drop one corner quadrant of the bounding box.
  bool l_shape = false;
  int corner = 0;
  int cut_h = 0, cut_w = 0;

  bool contains(int y, int x) const {
    if (y < y0 || y >= y0 + h || x < x0 || x >= x0 + w) return false;
    if (!l_shape) return true;
    const bool top = corner < 2, left = corner % 2 == 0;
    const bool in_rows = top ? y < y0 + cut_h : y >= y0 + h - cut_h;
    const bool in_cols = left ? x < x0 + cut_w : x >= x0 + w - cut_w;
    return !(in_rows && in_cols);
  }
};

struct Tree {
  double cy, cx, radius, height;
};

}  // namespace

void SceneParams::validate() const {
  const auto bad = [](const std::string& what) { return ContractViolation("scene params: " + what); };
  if (!(density >= 0.0 && density <= 0.6)) throw bad("density must lie in [0, 0.6]");
  if (min_building < 4 || max_building < min_building) throw bad("need 4 <= min_building <= max_building");
  if (!(min_height > 0.0 && max_height >= min_height)) throw bad("need 0 < min_height <= max_height");
  if (!(l_shape_fraction >= 0.0 && l_shape_fraction <= 1.0)) throw bad("l_shape_fraction must lie in [0, 1]");
  if (!(hard_fraction >= 0.0 && hard_fraction <= 1.0)) throw bad("hard_fraction must lie in [0, 1]");
  if (!(shadow_strength >= 0.0 && shadow_strength < 1.0)) throw bad("shadow_strength must lie in [0, 1)");
  if (!(rgb_noise >= 0.0) || !(depth_noise >= 0.0)) throw bad("noise levels must be non-negative");
  if (max_retries < 1) throw bad("max_retries must be positive");
}

RasterScene generate_scene(std::uint32_t id, std::uint64_t seed, int height, int width, const SceneParams& p) {
  p.validate();
  if (height < kMinSceneSide || width < kMinSceneSide) {
    throw ContractViolation("scene dims must be >= " + std::to_string(kMinSceneSide) + ", got " +
                            std::to_string(height) + "x" + std::to_string(width));
  }
  if (p.max_building + 2 * kGap > std::min(height, width)) {
    throw ContractViolation("max_building does not fit the scene");
  }
  Rng rng(seed);
  Canvas c(height, width);
  paint_ground(c, rng);

  std::vector<std::uint8_t> blocked(c.gt.size(), 0);
  std::vector<Tree> trees;
  RasterScene scene;
  scene.id = id;
  scene.seed = seed;
  scene.height = height;
  scene.width = width;

  const double target = p.density * static_cast<double>(c.gt.size());
  std::size_t built = 0;
  int failures = 0;
  while (static_cast<double>(built) < target) {
    const bool hard = uniform01(rng) < p.hard_fraction;
    if (hard && uniform01(rng) < 0.5) {
      trees.push_back({uniform(rng, 0, height), uniform(rng, 0, width), uniform(rng, 4.0, 9.0), uniform(rng, 4.0, 12.0)});
      continue;
    }
    Footprint f;
    f.h = static_cast<int>(uniform_int(rng, p.min_building, p.max_building));
    f.w = static_cast<int>(uniform_int(rng, p.min_building, p.max_building));
    f.y0 = static_cast<int>(uniform_int(rng, kGap, height - kGap - f.h));
    f.x0 = static_cast<int>(uniform_int(rng, kGap, width - kGap - f.w));
    if (uniform01(rng) < p.l_shape_fraction) {
      f.l_shape = true;
      f.corner = static_cast<int>(uniform_int(rng, 0, 3));
      f.cut_h = static_cast<int>(std::lround(f.h * uniform(rng, 0.35, 0.6)));
      f.cut_w = static_cast<int>(std::lround(f.w * uniform(rng, 0.35, 0.6)));
    }
    bool free = true;
    for (int y = f.y0; y < f.y0 + f.h && free; ++y) {
      for (int x = f.x0; x < f.x0 + f.w; ++x) {
        if (f.contains(y, x) && blocked[c.at(y, x)]) {
          free = false;
          break;
        }
      }
    }
    if (!free) {
      if (++failures >= p.max_retries) {
        throw Error("scene " + std::to_string(id) + ": cannot reach building density " + std::to_string(p.density) +
                    " (reached " + std::to_string(double(built) / double(c.gt.size())) + ") after " +
                    std::to_string(p.max_retries) + " failed placements");
      }
      continue;
    }
    failures = 0;

    const std::int32_t owner = static_cast<std::int32_t>(scene.stats.structures()) + 1;
    ++scene.stats.buildings;
    double roof_height;
    Color roof;
    if (hard) {
      ++scene.stats.hard_roofs;
      const int cy = f.y0 + f.h / 2, cx = f.x0 + f.w / 2;
      roof = jitter(c.color[c.at(cy, cx)], rng, 8.0);
      roof_height = uniform(rng, 0.6 * p.min_height, 1.2 * p.min_height);
    } else {
      roof = jitter(kRoofs[uniform_int(rng, 0, kRoofs.size() - 1)], rng, 12.0);
      roof_height = uniform(rng, p.min_height, p.max_height);
    }
    const bool ridge_along_x = f.w >= f.h;
    for (int y = f.y0; y < f.y0 + f.h; ++y) {
      for (int x = f.x0; x < f.x0 + f.w; ++x) {
        if (!f.contains(y, x)) continue;
        const std::size_t i = c.at(y, x);
        const bool shaded = !hard && (ridge_along_x ? y >= f.y0 + f.h / 2 : x >= f.x0 + f.w / 2);
        c.color[i] = shaded ? lerp(roof, Color{0, 0, 0}, 0.15) : roof;
        c.height[i] = roof_height;
        c.gt[i] = 1;
        c.owner[i] = owner;
        ++built;
      }
    }
    for (int y = std::max(0, f.y0 - kGap); y < std::min(height, f.y0 + f.h + kGap); ++y) {
      for (int x = std::max(0, f.x0 - kGap); x < std::min(width, f.x0 + f.w + kGap); ++x) blocked[c.at(y, x)] = 1;
    }
  }

  // Trees are drawn last so they occlude roofs; the building mask is kept.
  for (const auto& t : trees) {
    const std::int32_t owner = static_cast<std::int32_t>(scene.stats.structures()) + 1;
    ++scene.stats.trees;
    const Color leaf = jitter(kTree, rng, 10.0);
    const int r = static_cast<int>(std::ceil(t.radius));
    for (int y = std::max(0, int(t.cy) - r); y <= std::min(height - 1, int(t.cy) + r); ++y) {
      for (int x = std::max(0, int(t.cx) - r); x <= std::min(width - 1, int(t.cx) + r); ++x) {
        const double d2 = ((y - t.cy) * (y - t.cy) + (x - t.cx) * (x - t.cx)) / (t.radius * t.radius);
        if (d2 > 1.0) continue;
        const std::size_t i = c.at(y, x);
        const double canopy = t.height * std::sqrt(1.0 - d2);
        c.color[i] = lerp(leaf, Color{0, 0, 0}, 0.3 * std::sqrt(d2));
        c.height[i] = std::max(c.height[i], canopy);
        c.owner[i] = owner;
      }
    }
  }

  // Shadows: every raised pixel darkens lower pixels of other structures
  // along one per-scene sun direction.
  const double sun = uniform(rng, 0.0, 2.0 * M_PI);
  const double dy = std::sin(sun), dx = std::cos(sun);
  std::vector<std::uint8_t> shadow(c.gt.size(), 0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t i = c.at(y, x);
      const double hgt = c.height[i];
      if (hgt <= 0.0) continue;
      const int len = static_cast<int>(hgt * kShadowPixelsPerMeter);
      for (int s = 1; s <= len; ++s) {
        const int yy = static_cast<int>(std::lround(y + s * dy)), xx = static_cast<int>(std::lround(x + s * dx));
        if (yy < 0 || yy >= height || xx < 0 || xx >= width) break;
        const std::size_t j = c.at(yy, xx);
        if (c.owner[j] != c.owner[i] && c.height[j] < hgt - s / kShadowPixelsPerMeter) shadow[j] = 1;
      }
    }
  }

  scene.rgb.resize(c.gt.size() * 3);
  scene.depth.resize(c.gt.size());
  for (std::size_t i = 0; i < c.gt.size(); ++i) {
    const double shade = shadow[i] ? 1.0 - p.shadow_strength : 1.0;
    for (int ch = 0; ch < 3; ++ch) {
      const double v = c.color[i][ch] * shade + normal(rng, 0.0, p.rgb_noise);
      scene.rgb[3 * i + ch] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
    const double d = c.height[i] + normal(rng, 0.0, p.depth_noise);
    scene.depth[i] = static_cast<float>(std::max(0.0, d));
  }
  scene.gt = std::move(c.gt);
  return scene;
}

namespace {

constexpr std::string_view kDepthMagic = "BSEGDEP1";

void write_png(const std::filesystem::path& path, int height, int width, bool rgb, const std::uint8_t* pixels) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, pixels, 0, nullptr)) {
    throw Error("png encode failed for " + path.string() + ": " + image.message);
  }
  std::vector<char> buf(size);
  if (!png_image_write_to_memory(&image, buf.data(), &size, 0, pixels, 0, nullptr)) {
    throw Error("png encode failed for " + path.string() + ": " + image.message);
  }
  buf.resize(size);
  write_file(path, buf);
}

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, bool rgb, int& height, int& width) {
  const auto bytes = read_file(path);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw Error("png decode failed for " + path.string() + ": " + image.message);
  }
  image.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> out(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.data(), 0, nullptr)) {
    throw Error("png decode failed for " + path.string() + ": " + image.message);
  }
  height = static_cast<int>(image.height);
  width = static_cast<int>(image.width);
  return out;
}

}  // namespace

std::vector<char> encode_depth(int height, int width, const std::vector<float>& depth) {
  if (depth.size() != std::size_t(height) * std::size_t(width)) throw ContractViolation("depth size mismatch");
  ByteWriter w;
  w.raw(kDepthMagic);
  w.u32(static_cast<std::uint32_t>(height));
  w.u32(static_cast<std::uint32_t>(width));
  for (const float v : depth) w.f32(v);
  return w.bytes();
}

std::vector<float> decode_depth(std::span<const char> bytes, int& height, int& width) {
  ByteReader r(bytes);
  if (bytes.size() < 16 || r.raw(8) != kDepthMagic) throw Error("depth raster: bad magic");
  height = static_cast<int>(r.u32());
  width = static_cast<int>(r.u32());
  const std::size_t n = std::size_t(height) * std::size_t(width);
  if (r.remaining() != 4 * n) throw Error("depth raster: payload size does not match header");
  std::vector<float> out(n);
  for (auto& v : out) v = r.f32();
  return out;
}

void write_scene(const std::filesystem::path& dir, const RasterScene& s) {
  std::filesystem::create_directories(dir);
  write_png(dir / "rgb.png", s.height, s.width, true, s.rgb.data());
  std::vector<std::uint8_t> gt(s.gt.size());
  std::transform(s.gt.begin(), s.gt.end(), gt.begin(), [](std::uint8_t v) { return v ? 255 : 0; });
  write_png(dir / "gt.png", s.height, s.width, false, gt.data());
  write_file(dir / "depth.f32", encode_depth(s.height, s.width, s.depth));
}

RasterScene read_scene(const std::filesystem::path& dir, std::uint32_t id, std::uint64_t seed) {
  RasterScene s;
  s.id = id;
  s.seed = seed;
  int h = 0, w = 0, gh = 0, gw = 0, dh = 0, dw = 0;
  s.rgb = read_png(dir / "rgb.png", true, h, w);
  auto gt = read_png(dir / "gt.png", false, gh, gw);
  const auto depth_bytes = read_file(dir / "depth.f32");
  s.depth = decode_depth(depth_bytes, dh, dw);
  if (gh != h || gw != w || dh != h || dw != w) throw Error(dir.string() + ": layer dimensions disagree");
  for (auto& v : gt) {
    if (v != 0 && v != 255) throw Error(dir.string() + ": gt.png must be 0/255");
    v = v ? 1 : 0;
  }
  s.gt = std::move(gt);
  s.height = h;
  s.width = w;
  return s;
}

}  // namespace bseg::data
