#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bseg/model/trainer.hpp"

namespace bseg::model {

// Versioned binary container:
//   "BSEGCKPT" | u32 version | u32 len + JSON header | u32 tensor count |
//   per tensor: u32 len + name, u8 role, u32 rank, u32 dims..., f32 LE payload
// The JSON header carries the architecture, init seed, config hash and the
// loss history (wall times excluded so the bytes are reproducible).
struct Checkpoint {
  ArchitectureSpec spec;
  ModelParams<float> params;
  std::string config_hash;
  TrainHistory history;
};

inline constexpr std::string_view kCheckpointMagic = "BSEGCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const char> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const ArchitectureSpec& spec);
ArchitectureSpec architecture_from_json(const nlohmann::json& j);

}  // namespace bseg::model
