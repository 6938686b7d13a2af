#include "bseg/loss/manifest.hpp"

#include <json.hpp>

#include "bseg/common/bytes.hpp"
#include "bseg/common/error.hpp"

namespace bseg::loss {

using nlohmann::json;

namespace {

constexpr std::string_view kFormat = "bseg-loss-manifest/1";

}  // namespace

std::string encode_loss_manifest(const LossManifest& m) {
  std::string out = json{{"format", kFormat},
                         {"round", m.round},
                         {"checkpoint_sha256", m.checkpoint_sha256},
                         {"config_hash", m.config_hash},
                         {"records", m.records.size()}}
                        .dump();
  out += '\n';
  for (const auto& r : m.records) {
    out += json{{"id", r.sample_id},
                {"raw", r.raw_loss},
                {"clipped", r.clipped_loss},
                {"bin", bin_name(r.bin)},
                {"round", r.round}}
               .dump();
    out += '\n';
  }
  return out;
}

LossManifest decode_loss_manifest(std::string_view text) {
  LossManifest m;
  std::size_t line_no = 0;
  std::size_t expected = 0;
  bool have_header = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto fail = [&](const std::string& what) {
      return Error("loss manifest line " + std::to_string(line_no) + ": " + what);
    };
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw fail(e.what());
    }
    try {
      if (!have_header) {
        if (j.at("format").get<std::string>() != kFormat) throw fail("unknown format");
        m.round = j.at("round").get<int>();
        m.checkpoint_sha256 = j.at("checkpoint_sha256").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        expected = j.at("records").get<std::size_t>();
        m.records.reserve(expected);
        have_header = true;
        continue;
      }
      LossRecord r;
      r.sample_id = j.at("id").get<std::uint32_t>();
      r.raw_loss = j.at("raw").get<double>();
      r.clipped_loss = j.at("clipped").get<double>();
      r.bin = parse_bin(j.at("bin").get<std::string>());
      r.round = j.at("round").get<int>();
      if (r.round != m.round) throw fail("record round differs from header");
      if (!(r.raw_loss >= 0.0) || r.clipped_loss != clip_loss(r.raw_loss) || r.bin != assign_bin(r.raw_loss)) {
        throw fail("record for sample " + std::to_string(r.sample_id) + " violates clip/bin invariants");
      }
      m.records.push_back(r);
    } catch (const json::exception& e) {
      throw fail(e.what());
    } catch (const ContractViolation& e) {
      throw fail(e.what());
    }
  }
  if (!have_header) throw Error("loss manifest is empty");
  if (m.records.size() != expected) {
    throw Error("loss manifest declares " + std::to_string(expected) + " records, found " +
                std::to_string(m.records.size()));
  }
  return m;
}

void save_loss_manifest(const std::filesystem::path& path, const LossManifest& manifest) {
  write_text_file(path, encode_loss_manifest(manifest));
}

LossManifest load_loss_manifest(const std::filesystem::path& path) {
  try {
    return decode_loss_manifest(read_text_file(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace bseg::loss
