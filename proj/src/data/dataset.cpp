#include "bseg/data/dataset.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

#include "bseg/common/bytes.hpp"
#include "bseg/common/error.hpp"
#include "bseg/common/rng.hpp"

namespace bseg::data {

using nlohmann::json;

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  throw ContractViolation("invalid split");
}

Split parse_split(std::string_view name) {
  for (const Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    if (split_name(s) == name) return s;
  }
  throw Error("unknown split '" + std::string(name) + "'");
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].split == split) out.push_back(i);
  }
  return out;
}

std::array<std::size_t, 3> DatasetManifest::counts() const {
  std::array<std::size_t, 3> c{};
  for (const auto& e : entries) ++c[static_cast<std::size_t>(e.split)];
  return c;
}

std::vector<Split> split_scenes(std::span<const std::size_t> counts, const std::array<double, 3>& ratios,
                                std::uint64_t seed) {
  if (counts.size() < 3) {
    throw Error("need at least 3 scenes to form train/val/test splits, got " + std::to_string(counts.size()));
  }
  const double ratio_sum = ratios[0] + ratios[1] + ratios[2];
  for (const double r : ratios) {
    if (!(r > 0.0)) throw ContractViolation("split ratios must be positive");
  }
  std::vector<std::size_t> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::swap(order[i], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i)))]);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });

  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  std::array<double, 3> filled{};
  std::vector<Split> out(counts.size());
  const auto assign = [&](std::size_t scene, std::size_t split) {
    out[scene] = static_cast<Split>(split);
    filled[split] += static_cast<double>(counts[scene]);
  };
  const std::size_t n = order.size();
  assign(order[n - 1], 1);
  assign(order[n - 2], 2);
  assign(order[n - 3], 0);
  for (std::size_t k = 0; k + 3 < n; ++k) {
    std::size_t best = 0;
    double best_deficit = -1e300;
    for (std::size_t s = 0; s < 3; ++s) {
      const double deficit = ratios[s] / ratio_sum * total - filled[s];
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = s;
      }
    }
    assign(order[k], best);
  }
  return out;
}

DatasetManifest build_manifest(std::span<const SceneInfo> scenes, const PatchGeometry& geometry,
                               const std::array<double, 3>& ratios, std::uint64_t seed) {
  DatasetManifest m;
  m.ratios = ratios;
  m.seed = seed;
  m.geometry = geometry;
  m.scenes.assign(scenes.begin(), scenes.end());
  std::vector<std::vector<PatchOrigin>> grids;
  std::vector<std::size_t> counts;
  for (const auto& s : scenes) {
    grids.push_back(patch_grid(s.height, s.width, geometry));
    counts.push_back(grids.back().size());
  }
  const auto splits = split_scenes(counts, ratios, seed);
  std::uint32_t next = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (const auto& o : grids[i]) m.entries.push_back({next++, scenes[i].id, o, splits[i]});
  }
  return m;
}

namespace {

constexpr std::string_view kFormat = "bseg-dataset-manifest/1";

}  // namespace

std::string encode_dataset_manifest(const DatasetManifest& m) {
  json scenes = json::array();
  for (const auto& s : m.scenes) {
    scenes.push_back({{"id", s.id},
                      {"seed", s.seed},
                      {"height", s.height},
                      {"width", s.width},
                      {"buildings", s.stats.buildings},
                      {"hard_roofs", s.stats.hard_roofs},
                      {"trees", s.stats.trees}});
  }
  std::string out = json{{"format", kFormat},
                         {"ratios", m.ratios},
                         {"seed", m.seed},
                         {"input_side", m.geometry.input_side},
                         {"output_side", m.geometry.output_side},
                         {"stride", m.geometry.stride},
                         {"scenes", scenes},
                         {"records", m.entries.size()}}
                        .dump();
  out += '\n';
  for (const auto& e : m.entries) {
    out += json{{"id", e.sample_id}, {"scene", e.scene_id}, {"x", e.origin.x}, {"y", e.origin.y},
                {"split", split_name(e.split)}}
               .dump();
    out += '\n';
  }
  return out;
}

DatasetManifest decode_dataset_manifest(std::string_view text) {
  DatasetManifest m;
  bool have_header = false;
  std::size_t expected = 0, line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!have_header) {
        if (j.at("format").get<std::string>() != kFormat) throw Error("unknown format");
        m.ratios = j.at("ratios").get<std::array<double, 3>>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.geometry = {j.at("input_side").get<int>(), j.at("output_side").get<int>(), j.at("stride").get<int>()};
        for (const auto& s : j.at("scenes")) {
          SceneInfo info{s.at("id").get<std::uint32_t>(), s.at("seed").get<std::uint64_t>(),
                         s.at("height").get<int>(), s.at("width").get<int>(), {}};
          info.stats = {s.at("buildings").get<std::uint32_t>(), s.at("hard_roofs").get<std::uint32_t>(),
                        s.at("trees").get<std::uint32_t>()};
          m.scenes.push_back(info);
        }
        expected = j.at("records").get<std::size_t>();
        have_header = true;
        continue;
      }
      m.entries.push_back({j.at("id").get<std::uint32_t>(), j.at("scene").get<std::uint32_t>(),
                           {j.at("y").get<int>(), j.at("x").get<int>()},
                           parse_split(j.at("split").get<std::string>())});
    } catch (const std::exception& e) {
      throw Error("dataset manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw Error("dataset manifest is empty");
  if (m.entries.size() != expected) {
    throw Error("dataset manifest declares " + std::to_string(expected) + " records, found " +
                std::to_string(m.entries.size()));
  }
  return m;
}

void save_dataset_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  write_text_file(path, encode_dataset_manifest(m));
}

DatasetManifest load_dataset_manifest(const std::filesystem::path& path) {
  try {
    return decode_dataset_manifest(read_text_file(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

SceneCorpus::SceneCorpus(DatasetManifest manifest, std::span<const RasterScene> scenes, const NormalizeParams& norm)
    : manifest_(std::move(manifest)) {
  std::vector<std::pair<std::uint32_t, std::size_t>> slot_of;
  for (const auto& s : scenes) {
    slot_of.emplace_back(s.id, padded_.size());
    padded_.push_back(pad_scene(s, manifest_.geometry, norm));
  }
  std::sort(slot_of.begin(), slot_of.end());
  std::vector<std::uint32_t> missing;
  scene_slot_.reserve(manifest_.entries.size());
  for (const auto& e : manifest_.entries) {
    const auto it = std::lower_bound(slot_of.begin(), slot_of.end(), std::make_pair(e.scene_id, std::size_t{0}));
    if (it == slot_of.end() || it->first != e.scene_id) {
      if (missing.empty() || missing.back() != e.scene_id) missing.push_back(e.scene_id);
      scene_slot_.push_back(0);
      continue;
    }
    const auto& p = padded_[it->second];
    const int side = manifest_.geometry.output_side;
    if (e.origin.y < 0 || e.origin.x < 0 || e.origin.y + side > p.height || e.origin.x + side > p.width) {
      throw Error("sample " + std::to_string(e.sample_id) + " lies outside scene " + std::to_string(e.scene_id));
    }
    scene_slot_.push_back(it->second);
  }
  if (!missing.empty()) {
    std::string ids;
    for (const auto id : missing) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
    throw Error("manifest references scenes that were not provided: " + ids);
  }
}

std::size_t SceneCorpus::input_size() const {
  return 4 * std::size_t(manifest_.geometry.input_side) * manifest_.geometry.input_side;
}

std::size_t SceneCorpus::target_size() const {
  return std::size_t(manifest_.geometry.output_side) * manifest_.geometry.output_side;
}

const PaddedScene& SceneCorpus::scene_for(std::size_t index) const { return padded_[scene_slot_.at(index)]; }

void SceneCorpus::fill_input(std::size_t index, std::span<float> out) const {
  extract_input(scene_for(index), manifest_.geometry, manifest_.entries[index].origin, out);
}

void SceneCorpus::fill_target(std::size_t index, std::span<float> out) const {
  extract_target(scene_for(index), manifest_.geometry, manifest_.entries[index].origin, out);
}

std::size_t SceneCorpus::index_of(std::uint32_t sample_id) const {
  // Ids are dense and ordered for built manifests; fall back to a scan.
  if (sample_id < manifest_.entries.size() && manifest_.entries[sample_id].sample_id == sample_id) return sample_id;
  for (std::size_t i = 0; i < manifest_.entries.size(); ++i) {
    if (manifest_.entries[i].sample_id == sample_id) return i;
  }
  throw Error("unknown sample id " + std::to_string(sample_id));
}

}  // namespace bseg::data
