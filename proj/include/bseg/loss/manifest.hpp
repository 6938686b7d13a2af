#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bseg/loss/binning.hpp"

namespace bseg::loss {

// Per-sample losses of one scoring pass. Serialized as JSON lines: a header
// object, then one object per record in stored order.
struct LossManifest {
  int round = 0;
  std::string checkpoint_sha256;
  std::string config_hash;
  std::vector<LossRecord> records;

  friend bool operator==(const LossManifest&, const LossManifest&) = default;
};

std::string encode_loss_manifest(const LossManifest& manifest);
// Throws Error naming the offending line; records must agree with the
// header round and with the clip/bin invariants.
LossManifest decode_loss_manifest(std::string_view text);

void save_loss_manifest(const std::filesystem::path& path, const LossManifest& manifest);
LossManifest load_loss_manifest(const std::filesystem::path& path);

}  // namespace bseg::loss
