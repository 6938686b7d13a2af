#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bseg/data/scene.hpp"
#include "bseg/data/tiling.hpp"
#include "bseg/model/sample_source.hpp"

namespace bseg::data {

enum class Split : std::uint8_t { kTrain = 0, kVal, kTest };

std::string_view split_name(Split s);  // "train", "val", "test"
Split parse_split(std::string_view name);

struct SceneInfo {
  std::uint32_t id = 0;
  std::uint64_t seed = 0;
  int height = 0;
  int width = 0;
  SceneStats stats;
  friend bool operator==(const SceneInfo& a, const SceneInfo& b) {
    return a.id == b.id && a.seed == b.seed && a.height == b.height && a.width == b.width &&
           a.stats.buildings == b.stats.buildings && a.stats.hard_roofs == b.stats.hard_roofs &&
           a.stats.trees == b.stats.trees;
  }
};

struct ManifestEntry {
  std::uint32_t sample_id = 0;
  std::uint32_t scene_id = 0;
  PatchOrigin origin;
  Split split = Split::kTrain;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::array<double, 3> ratios{0.7, 0.1, 0.2};
  std::uint64_t seed = 0;
  PatchGeometry geometry;
  std::vector<SceneInfo> scenes;
  std::vector<ManifestEntry> entries;  // ordered by sample id

  std::vector<std::size_t> indices(Split split) const;  // positions into entries
  std::array<std::size_t, 3> counts() const;
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// Assigns whole scenes to splits. Each split is seeded with one scene (the
// three smallest, in shuffled order), then the remaining scenes, largest
// first, go to the split with the largest patch deficit against its target.
// Throws Error for fewer than three scenes.
std::vector<Split> split_scenes(std::span<const std::size_t> patch_counts, const std::array<double, 3>& ratios,
                                std::uint64_t seed);

// Tiles every scene, assigns sample ids in scene order, splits by scene.
DatasetManifest build_manifest(std::span<const SceneInfo> scenes, const PatchGeometry& geometry,
                               const std::array<double, 3>& ratios, std::uint64_t seed);

// JSON lines: header (format, ratios, seed, geometry, scenes), then one
// record per sample {id, scene, x, y, split}.
std::string encode_dataset_manifest(const DatasetManifest& m);
DatasetManifest decode_dataset_manifest(std::string_view text);
void save_dataset_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest load_dataset_manifest(const std::filesystem::path& path);

// Sample source over in-memory scenes; index i is manifest entry i.
class SceneCorpus : public model::SampleSource {
 public:
  SceneCorpus(DatasetManifest manifest, std::span<const RasterScene> scenes, const NormalizeParams& norm = {});

  std::size_t size() const override { return manifest_.entries.size(); }
  std::uint32_t sample_id(std::size_t index) const override { return manifest_.entries.at(index).sample_id; }
  std::size_t input_size() const override;
  std::size_t target_size() const override;
  void fill_input(std::size_t index, std::span<float> out) const override;
  void fill_target(std::size_t index, std::span<float> out) const override;

  const DatasetManifest& manifest() const { return manifest_; }
  // Position of a sample id in the manifest; throws Error if unknown.
  std::size_t index_of(std::uint32_t sample_id) const;

 private:
  const PaddedScene& scene_for(std::size_t index) const;

  DatasetManifest manifest_;
  std::vector<PaddedScene> padded_;
  std::vector<std::size_t> scene_slot_;  // per entry, index into padded_
};

}  // namespace bseg::data
