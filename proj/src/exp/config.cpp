#include "bseg/exp/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "bseg/common/bytes.hpp"
#include "bseg/common/error.hpp"

namespace bseg::exp {

namespace {

namespace pt = boost::property_tree;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view text) {
  const auto s = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error("expected a number, got '" + std::string(text) + "'");
  }
  return v;
}

bool parse_bool(std::string_view text) {
  const auto s = trim(text);
  if (s == "true") return true;
  if (s == "false") return false;
  throw Error("expected true or false, got '" + std::string(text) + "'");
}

template <typename T>
std::vector<T> parse_list(std::string_view text) {
  std::vector<T> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    out.push_back(parse_number<T>(text.substr(start, comma == std::string_view::npos ? comma : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
std::string format_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_number(v[i]);
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

// Accessor-based field constructors keep the table below compact.
template <typename T, typename Access>
Field num(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](const ExperimentConfig& c) { return format_number(access(c)); },
          [access](ExperimentConfig& c, std::string_view v) { access(c) = parse_number<T>(v); }};
}

template <typename Access>
Field flag(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](const ExperimentConfig& c) { return std::string(access(c) ? "true" : "false"); },
          [access](ExperimentConfig& c, std::string_view v) { access(c) = parse_bool(v); }};
}

template <typename T, typename Access>
Field list(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](const ExperimentConfig& c) { return format_list(access(c)); },
          [access](ExperimentConfig& c, std::string_view v) { access(c) = parse_list<T>(v); }};
}

#define BSEG_REF(expr) [](auto& c) -> auto& { return expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(num<int>("corpus", "scenes", BSEG_REF(c.corpus.scenes)));
    f.push_back(num<int>("corpus", "height", BSEG_REF(c.corpus.height)));
    f.push_back(num<int>("corpus", "width", BSEG_REF(c.corpus.width)));
    f.push_back(num<std::uint64_t>("corpus", "seed", BSEG_REF(c.corpus.seed)));
    f.push_back(num<double>("corpus", "density", BSEG_REF(c.corpus.scene.density)));
    f.push_back(num<int>("corpus", "min_building", BSEG_REF(c.corpus.scene.min_building)));
    f.push_back(num<int>("corpus", "max_building", BSEG_REF(c.corpus.scene.max_building)));
    f.push_back(num<double>("corpus", "min_height", BSEG_REF(c.corpus.scene.min_height)));
    f.push_back(num<double>("corpus", "max_height", BSEG_REF(c.corpus.scene.max_height)));
    f.push_back(num<double>("corpus", "l_shape_fraction", BSEG_REF(c.corpus.scene.l_shape_fraction)));
    f.push_back(num<double>("corpus", "hard_fraction", BSEG_REF(c.corpus.scene.hard_fraction)));
    f.push_back(num<double>("corpus", "shadow_strength", BSEG_REF(c.corpus.scene.shadow_strength)));
    f.push_back(num<double>("corpus", "rgb_noise", BSEG_REF(c.corpus.scene.rgb_noise)));
    f.push_back(num<double>("corpus", "depth_noise", BSEG_REF(c.corpus.scene.depth_noise)));
    f.push_back(num<int>("corpus", "max_retries", BSEG_REF(c.corpus.scene.max_retries)));
    f.push_back(num<double>("corpus", "split_train", BSEG_REF(c.corpus.ratios[0])));
    f.push_back(num<double>("corpus", "split_val", BSEG_REF(c.corpus.ratios[1])));
    f.push_back(num<double>("corpus", "split_test", BSEG_REF(c.corpus.ratios[2])));
    f.push_back(num<std::uint64_t>("corpus", "split_seed", BSEG_REF(c.corpus.split_seed)));
    f.push_back(num<int>("corpus", "input_side", BSEG_REF(c.corpus.geometry.input_side)));
    f.push_back(num<int>("corpus", "output_side", BSEG_REF(c.corpus.geometry.output_side)));
    f.push_back(num<int>("corpus", "stride", BSEG_REF(c.corpus.geometry.stride)));
    f.push_back(num<double>("corpus", "depth_max", BSEG_REF(c.corpus.normalize.depth_max)));

    f.push_back({"model", "variant",
                 [](const ExperimentConfig& c) { return std::string(model::variant_name(c.model.variant)); },
                 [](ExperimentConfig& c, std::string_view v) {
                   try {
                     c.model.variant = model::parse_variant(trim(v));
                   } catch (const ContractViolation&) {
                     throw Error("expected densenet_bs or baseline_cnn, got '" + std::string(v) + "'");
                   }
                 }});
    f.push_back(num<int>("model", "stem_filters", BSEG_REF(c.model.stem_filters)));
    f.push_back(num<int>("model", "stem_kernel", BSEG_REF(c.model.stem_kernel)));
    f.push_back(num<int>("model", "dense_blocks", BSEG_REF(c.model.dense_blocks)));
    f.push_back(num<int>("model", "layers_per_block", BSEG_REF(c.model.layers_per_block)));
    f.push_back(num<int>("model", "growth_rate", BSEG_REF(c.model.growth_rate)));
    f.push_back(num<double>("model", "compression", BSEG_REF(c.model.compression)));
    f.push_back(num<int>("model", "fc_hidden", BSEG_REF(c.model.fc_hidden)));
    f.push_back(num<double>("model", "dropout", BSEG_REF(c.model.dropout)));
    f.push_back(list<int>("model", "baseline_filters", BSEG_REF(c.model.baseline_filters)));

    f.push_back(num<double>("train", "learning_rate", BSEG_REF(c.train.learning_rate)));
    f.push_back(num<double>("train", "momentum", BSEG_REF(c.train.momentum)));
    f.push_back(num<double>("train", "lr_decay", BSEG_REF(c.train.lr_decay)));
    f.push_back(num<double>("train", "decay_fraction", BSEG_REF(c.train.decay_fraction)));
    f.push_back(num<int>("train", "batch_size", BSEG_REF(c.train.batch_size)));
    f.push_back(num<int>("train", "epochs", BSEG_REF(c.train.epochs)));
    f.push_back(num<int>("train", "patience", BSEG_REF(c.train.patience)));
    f.push_back(num<std::uint64_t>("train", "seed", BSEG_REF(c.train.seed)));

    f.push_back(num<int>("bootstrap", "rounds", BSEG_REF(c.bootstrap.rounds)));
    f.push_back(num<std::uint64_t>("bootstrap", "seed", BSEG_REF(c.bootstrap.seed)));
    f.push_back(flag("bootstrap", "include_zero_bin", BSEG_REF(c.bootstrap.include_zero_bin)));
    f.push_back(flag("bootstrap", "force_full_subset", BSEG_REF(c.bootstrap.force_full_subset)));
    f.push_back(flag("bootstrap", "match_steps", BSEG_REF(c.bootstrap.match_steps)));

    f.push_back(list<double>("eval", "overlaps", BSEG_REF(c.eval.overlaps)));
    f.push_back(num<int>("eval", "thresholds", BSEG_REF(c.eval.thresholds)));
    f.push_back(num<std::size_t>("eval", "min_component", BSEG_REF(c.eval.min_component)));
    return f;
  }();
  return table;
}

#undef BSEG_REF

std::string field_name(std::string_view section, std::string_view key) {
  return "[" + std::string(section) + "] " + std::string(key);
}

}  // namespace

std::vector<double> ExperimentConfig::threshold_grid() const {
  std::vector<double> g;
  for (int i = 1; i <= eval.thresholds; ++i) g.push_back(static_cast<double>(i) / (eval.thresholds + 1));
  return g;
}

ExperimentConfig parse_config(std::string_view text, std::string_view source) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(std::string(source) + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  std::map<std::pair<std::string, std::string>, const Field*> index;
  std::set<std::string> sections{"output"};
  for (const auto& f : fields()) {
    index[{f.section, f.key}] = &f;
    sections.insert(f.section);
  }
  ExperimentConfig c;
  bool has_output = false;
  for (const auto& [section, body] : tree) {
    if (!body.data().empty() && body.empty()) {
      throw Error(std::string(source) + ": key '" + section + "' appears outside any section");
    }
    if (!sections.count(section)) throw Error(std::string(source) + ": unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      const auto& v = value.data();
      if (section == "output" && key == "dir") {
        if (trim(v).empty()) throw Error(std::string(source) + ": [output] dir: must not be empty");
        c.output_dir = trim(v);
        has_output = true;
        continue;
      }
      const auto it = index.find({section, key});
      if (it == index.end()) throw Error(std::string(source) + ": unknown key " + field_name(section, key));
      try {
        it->second->set(c, v);
      } catch (const Error& e) {
        throw Error(std::string(source) + ": " + field_name(section, key) + ": " + e.what());
      }
    }
  }
  if (!has_output) throw Error(std::string(source) + ": missing [output] dir");
  c.model.input_side = c.corpus.geometry.input_side;
  c.model.output_side = c.corpus.geometry.output_side;
  try {
    validate(c);
  } catch (const Error& e) {
    throw Error(std::string(source) + ": " + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    throw Error("cannot read config " + path.string() + ": " + e.what());
  }
  auto c = parse_config(text, path.string());
  if (c.output_dir.is_relative()) c.output_dir = path.parent_path() / c.output_dir;
  c.output_dir = c.output_dir.lexically_normal();
  return c;
}

std::string canonical_config(const ExperimentConfig& config) {
  std::string out, section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
      section = f.section;
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

std::string config_hash(const ExperimentConfig& config) { return sha256_hex(std::string_view(canonical_config(config))); }

void validate(const ExperimentConfig& c) {
  const auto check = [](bool ok, std::string_view section, std::string_view key, const std::string& why) {
    if (!ok) throw Error(field_name(section, key) + ": " + why);
  };
  const auto wrap = [](std::string_view what, const auto& fn) {
    try {
      fn();
    } catch (const ContractViolation& e) {
      throw Error(std::string(what) + ": " + e.what());
    }
  };
  check(c.corpus.scenes >= 3, "corpus", "scenes", "need at least 3 scenes (one per split)");
  check(c.corpus.height >= data::kMinSceneSide, "corpus", "height", "must be >= " + std::to_string(data::kMinSceneSide));
  check(c.corpus.width >= data::kMinSceneSide, "corpus", "width", "must be >= " + std::to_string(data::kMinSceneSide));
  for (int i = 0; i < 3; ++i) {
    static const char* names[] = {"split_train", "split_val", "split_test"};
    check(c.corpus.ratios[i] > 0.0, "corpus", names[i], "must be > 0");
  }
  check(c.corpus.normalize.depth_max > 0.0, "corpus", "depth_max", "must be > 0");
  wrap("[corpus] scene parameters", [&] { c.corpus.scene.validate(); });
  wrap("[corpus] patch geometry", [&] { c.corpus.geometry.validate(); });
  check(c.corpus.height >= c.corpus.geometry.input_side, "corpus", "height", "smaller than one input window");
  check(c.corpus.width >= c.corpus.geometry.input_side, "corpus", "width", "smaller than one input window");
  check(c.model.input_side == c.corpus.geometry.input_side && c.model.output_side == c.corpus.geometry.output_side,
        "model", "input_side", "must follow the corpus patch geometry");
  wrap("[model]", [&] { model::plan_shapes(c.model); });
  wrap("[train]", [&] { model::validate(c.train); });
  check(c.train.epochs >= 1, "train", "epochs", "must be >= 1");
  check(c.bootstrap.rounds >= 0, "bootstrap", "rounds", "must be >= 0");
  check(!c.eval.overlaps.empty(), "eval", "overlaps", "must be nonempty");
  for (const double o : c.eval.overlaps) check(o > 0.0 && o <= 1.0, "eval", "overlaps", "values must lie in (0, 1]");
  check(c.eval.thresholds >= 1, "eval", "thresholds", "must be >= 1");
}

}  // namespace bseg::exp
