#include "bseg/model/checkpoint.hpp"

#include "bseg/common/bytes.hpp"
#include "bseg/common/error.hpp"

namespace bseg::model {

using nlohmann::json;

json to_json(const ArchitectureSpec& s) {
  return json{{"variant", variant_name(s.variant)},
              {"input_channels", s.input_channels},
              {"input_side", s.input_side},
              {"output_side", s.output_side},
              {"stem_filters", s.stem_filters},
              {"stem_kernel", s.stem_kernel},
              {"dense_blocks", s.dense_blocks},
              {"layers_per_block", s.layers_per_block},
              {"growth_rate", s.growth_rate},
              {"compression", s.compression},
              {"fc_hidden", s.fc_hidden},
              {"dropout", s.dropout},
              {"baseline_filters", s.baseline_filters}};
}

ArchitectureSpec architecture_from_json(const json& j) {
  ArchitectureSpec s;
  s.variant = parse_variant(j.at("variant").get<std::string>());
  s.input_channels = j.at("input_channels").get<int>();
  s.input_side = j.at("input_side").get<int>();
  s.output_side = j.at("output_side").get<int>();
  s.stem_filters = j.at("stem_filters").get<int>();
  s.stem_kernel = j.at("stem_kernel").get<int>();
  s.dense_blocks = j.at("dense_blocks").get<int>();
  s.layers_per_block = j.at("layers_per_block").get<int>();
  s.growth_rate = j.at("growth_rate").get<int>();
  s.compression = j.at("compression").get<double>();
  s.fc_hidden = j.at("fc_hidden").get<int>();
  s.dropout = j.at("dropout").get<double>();
  s.baseline_filters = j.at("baseline_filters").get<std::vector<int>>();
  return s;
}

std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  validate_params(ckpt.spec, ckpt.params);
  json history = json::array();
  for (const auto& e : ckpt.history.epochs) {
    history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  }
  json header{{"architecture", to_json(ckpt.spec)},
              {"seed", ckpt.params.seed},
              {"config_hash", ckpt.config_hash},
              {"history", history},
              {"selected_epoch", ckpt.history.selected_epoch ? json(*ckpt.history.selected_epoch) : json(nullptr)}};

  ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.string(header.dump());
  w.u32(static_cast<std::uint32_t>(ckpt.params.entries.size()));
  for (const auto& e : ckpt.params.entries) {
    w.string(e.name);
    w.u8(static_cast<std::uint8_t>(e.role));
    w.u32(static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : e.value.data()) w.f32(v);
  }
  return w.bytes();
}

Checkpoint decode_checkpoint(std::span<const char> bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kCheckpointMagic.size() || r.raw(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw Error("not a checkpoint: bad magic");
  }
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  const json header = json::parse(r.string());
  Checkpoint ckpt;
  ckpt.spec = architecture_from_json(header.at("architecture"));
  ckpt.params.seed = header.at("seed").get<std::uint64_t>();
  ckpt.config_hash = header.at("config_hash").get<std::string>();
  for (const auto& e : header.at("history")) {
    ckpt.history.epochs.push_back(
        {e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("val_loss").get<double>(), 0.0});
  }
  if (!header.at("selected_epoch").is_null()) ckpt.history.selected_epoch = header.at("selected_epoch").get<int>();

  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Parameter<float> p;
    p.name = r.string();
    p.role = static_cast<ParamRole>(r.u8());
    const auto rank = r.u32();
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    std::vector<float> data(ad::element_count(shape));
    for (auto& v : data) v = r.f32();
    p.value = ad::Tensor<float>(std::move(shape), std::move(data));
    ckpt.params.entries.push_back(std::move(p));
  }
  if (r.remaining() != 0) throw Error("checkpoint has trailing bytes");
  validate_params(ckpt.spec, ckpt.params);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace bseg::model
