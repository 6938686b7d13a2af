#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "bseg/ad/tensor.hpp"

namespace bseg::model {

enum class Variant { kDenseNetBS, kBaselineCnn };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

// Network hyper-structure. The defaults describe the desk-scale DenseNet:
// 3x3 stem with 16 filters then 2x2 max-pool, three dense blocks of
// BN-ReLU-conv3x3-dropout layers with growth rate 12, 1x1-conv + 2x2
// average-pool transitions, and a head of 2x2 max-pool, FC 512, FC 576
// reshaped to 24x24 under a sigmoid.
struct ArchitectureSpec {
  Variant variant = Variant::kDenseNetBS;
  int input_channels = 4;
  int input_side = 80;
  int output_side = 24;

  int stem_filters = 16;
  int stem_kernel = 3;
  int dense_blocks = 3;
  int layers_per_block = 4;
  int growth_rate = 12;
  double compression = 1.0;
  int fc_hidden = 512;
  double dropout = 0.1;

  // baseline_cnn: one conv-BN-ReLU stage per entry; all but the fourth stage
  // end in a 2x2 max-pool (80 -> 40 -> 20 -> 10 -> 10 -> 5).
  std::vector<int> baseline_filters{16, 32, 48, 64, 64};

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

// One step of the static shape walk.
struct Stage {
  std::string name;
  int channels = 0;
  int side = 0;
};

struct ShapePlan {
  std::vector<Stage> stages;
  // Input channels of each dense layer, [block][layer].
  std::vector<std::vector<int>> dense_layer_inputs;
  int flatten_features = 0;
};

// Walks the architecture and fails with a ContractViolation naming the first
// stage that cannot be built (odd side before a pool, non-positive width...).
ShapePlan plan_shapes(const ArchitectureSpec& spec);

// Channel count seen by layer `layer` of a dense block that starts with
// `block_input` channels: each earlier layer contributed `growth` maps.
constexpr int dense_layer_input_channels(int block_input, int layer, int growth) {
  return block_input + layer * growth;
}

constexpr int transition_output_channels(int channels, double compression) {
  return static_cast<int>(channels * compression);
}

// Channels entering dense block `block` (0-based) after the stem and the
// preceding blocks and transitions.
constexpr int dense_block_input_channels(int stem, int block, int layers, int growth, double compression = 1.0) {
  int c = stem;
  for (int b = 0; b < block; ++b) {
    c = transition_output_channels(dense_layer_input_channels(c, layers, growth), compression);
  }
  return c;
}

enum class ParamRole : std::uint8_t { kWeight, kBias, kGamma, kBeta, kRunningMean, kRunningVar };

constexpr bool is_trainable(ParamRole r) { return r != ParamRole::kRunningMean && r != ParamRole::kRunningVar; }

// Declared parameter, in the order the forward pass consumes them.
struct ParamSlot {
  std::string name;
  ParamRole role;
  ad::Shape shape;
  std::size_t fan_in = 0;  // weights only
  bool output_layer = false;
};

std::vector<ParamSlot> param_layout(const ArchitectureSpec& spec);

// Number of trainable scalars.
std::size_t parameter_count(const ArchitectureSpec& spec);

}  // namespace bseg::model
