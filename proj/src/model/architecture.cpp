#include "bseg/model/architecture.hpp"

#include "bseg/common/error.hpp"

namespace bseg::model {

namespace {

void fail(const std::string& stage, const std::string& why) {
  throw ContractViolation("shape plan failed at stage '" + stage + "': " + why);
}

void require_positive(const std::string& stage, const char* what, double v) {
  if (!(v > 0)) fail(stage, std::string(what) + " must be positive");
}

int pooled(const std::string& stage, int side) {
  if (side % 2 != 0) fail(stage, "2x2 pooling needs an even side, got " + std::to_string(side));
  return side / 2;
}

int transition_channels(const ArchitectureSpec& spec, int channels) {
  return transition_output_channels(channels, spec.compression);
}

// Default DenseNet (c0 = 16, k = 12, 4 layers, 3 blocks): layer l of block b
// consumes c_b + l*k channels.
static_assert(dense_block_input_channels(16, 0, 4, 12) == 16);
static_assert(dense_block_input_channels(16, 1, 4, 12) == 64);
static_assert(dense_block_input_channels(16, 2, 4, 12) == 112);
static_assert(dense_layer_input_channels(dense_block_input_channels(16, 2, 4, 12), 3, 12) == 148);

void add_bn(std::vector<ParamSlot>& out, const std::string& prefix, int channels) {
  const auto c = static_cast<std::size_t>(channels);
  out.push_back({prefix + ".gamma", ParamRole::kGamma, {c}});
  out.push_back({prefix + ".beta", ParamRole::kBeta, {c}});
  out.push_back({prefix + ".running_mean", ParamRole::kRunningMean, {c}});
  out.push_back({prefix + ".running_var", ParamRole::kRunningVar, {c}});
}

void add_conv(std::vector<ParamSlot>& out, const std::string& name, int in, int outc, int k) {
  const auto ks = static_cast<std::size_t>(k);
  out.push_back({name, ParamRole::kWeight,
                 {static_cast<std::size_t>(outc), static_cast<std::size_t>(in), ks, ks},
                 static_cast<std::size_t>(in) * ks * ks});
}

void add_fc(std::vector<ParamSlot>& out, const std::string& prefix, int in, int outw, bool last) {
  out.push_back({prefix + ".weight", ParamRole::kWeight,
                 {static_cast<std::size_t>(in), static_cast<std::size_t>(outw)},
                 static_cast<std::size_t>(in), last});
  out.push_back({prefix + ".bias", ParamRole::kBias, {static_cast<std::size_t>(outw)}});
}

}  // namespace

std::string_view variant_name(Variant v) {
  return v == Variant::kDenseNetBS ? "densenet_bs" : "baseline_cnn";
}

Variant parse_variant(std::string_view name) {
  if (name == "densenet_bs") return Variant::kDenseNetBS;
  if (name == "baseline_cnn") return Variant::kBaselineCnn;
  throw ContractViolation("unknown model variant '" + std::string(name) + "'");
}

ShapePlan plan_shapes(const ArchitectureSpec& spec) {
  ShapePlan plan;
  require_positive("input", "input_channels", spec.input_channels);
  require_positive("input", "input_side", spec.input_side);
  require_positive("head", "output_side", spec.output_side);
  require_positive("head", "fc_hidden", spec.fc_hidden);
  if (!(spec.dropout >= 0.0 && spec.dropout < 1.0)) fail("dense", "dropout must lie in [0, 1)");
  int channels = spec.input_channels;
  int side = spec.input_side;
  plan.stages.push_back({"input", channels, side});

  if (spec.variant == Variant::kDenseNetBS) {
    require_positive("stem", "stem_filters", spec.stem_filters);
    if (spec.stem_kernel <= 0 || spec.stem_kernel % 2 == 0) fail("stem", "stem_kernel must be odd and positive");
    if (spec.dense_blocks < 1) fail("dense", "need at least one dense block");
    require_positive("dense", "layers_per_block", spec.layers_per_block);
    require_positive("dense", "growth_rate", spec.growth_rate);
    if (!(spec.compression > 0.0 && spec.compression <= 1.0)) fail("transition", "compression must lie in (0, 1]");

    channels = spec.stem_filters;
    plan.stages.push_back({"stem.conv", channels, side});
    side = pooled("stem.pool", side);
    plan.stages.push_back({"stem.pool", channels, side});
    for (int b = 0; b < spec.dense_blocks; ++b) {
      const std::string block = "block" + std::to_string(b + 1);
      std::vector<int> inputs;
      for (int l = 0; l < spec.layers_per_block; ++l) {
        inputs.push_back(dense_layer_input_channels(channels, l, spec.growth_rate));
      }
      channels = dense_layer_input_channels(channels, spec.layers_per_block, spec.growth_rate);
      plan.dense_layer_inputs.push_back(std::move(inputs));
      plan.stages.push_back({block, channels, side});
      if (b + 1 < spec.dense_blocks) {
        const std::string trans = "trans" + std::to_string(b + 1);
        channels = transition_channels(spec, channels);
        if (channels < 1) fail(trans, "compression leaves no channels");
        side = pooled(trans, side);
        plan.stages.push_back({trans, channels, side});
      }
    }
    side = pooled("head.pool", side);
    plan.stages.push_back({"head.pool", channels, side});
  } else {
    if (spec.baseline_filters.size() != 5) fail("baseline", "baseline_cnn needs exactly 5 conv stages");
    for (std::size_t s = 0; s < spec.baseline_filters.size(); ++s) {
      const std::string name = "conv" + std::to_string(s + 1);
      require_positive(name, "filters", spec.baseline_filters[s]);
      channels = spec.baseline_filters[s];
      if (s != 3) side = pooled(name, side);
      plan.stages.push_back({name, channels, side});
    }
  }
  plan.flatten_features = channels * side * side;
  plan.stages.push_back({"fc1", spec.fc_hidden, 1});
  plan.stages.push_back({"fc2", spec.output_side * spec.output_side, 1});
  return plan;
}

std::vector<ParamSlot> param_layout(const ArchitectureSpec& spec) {
  const ShapePlan plan = plan_shapes(spec);
  std::vector<ParamSlot> out;
  if (spec.variant == Variant::kDenseNetBS) {
    add_conv(out, "stem.conv", spec.input_channels, spec.stem_filters, spec.stem_kernel);
    int channels = spec.stem_filters;
    for (int b = 0; b < spec.dense_blocks; ++b) {
      const std::string block = "block" + std::to_string(b + 1);
      for (int l = 0; l < spec.layers_per_block; ++l) {
        const int in = plan.dense_layer_inputs[b][l];
        const std::string layer = block + ".layer" + std::to_string(l);
        add_bn(out, layer + ".bn", in);
        add_conv(out, layer + ".conv", in, spec.growth_rate, 3);
      }
      channels = dense_layer_input_channels(channels, spec.layers_per_block, spec.growth_rate);
      if (b + 1 < spec.dense_blocks) {
        const std::string trans = "trans" + std::to_string(b + 1);
        const int next = transition_channels(spec, channels);
        add_bn(out, trans + ".bn", channels);
        add_conv(out, trans + ".conv", channels, next, 1);
        channels = next;
      }
    }
    add_bn(out, "head.bn", channels);
  } else {
    int channels = spec.input_channels;
    for (std::size_t s = 0; s < spec.baseline_filters.size(); ++s) {
      const std::string name = "conv" + std::to_string(s + 1);
      add_conv(out, name + ".conv", channels, spec.baseline_filters[s], 3);
      add_bn(out, name + ".bn", spec.baseline_filters[s]);
      channels = spec.baseline_filters[s];
    }
  }
  add_fc(out, "fc1", plan.flatten_features, spec.fc_hidden, false);
  add_fc(out, "fc2", spec.fc_hidden, spec.output_side * spec.output_side, true);
  return out;
}

std::size_t parameter_count(const ArchitectureSpec& spec) {
  std::size_t n = 0;
  for (const auto& slot : param_layout(spec)) {
    if (is_trainable(slot.role)) n += ad::element_count(slot.shape);
  }
  return n;
}

}  // namespace bseg::model
