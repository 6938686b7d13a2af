#include "bseg/model/network.hpp"

#include <cmath>

#include "bseg/common/error.hpp"

namespace bseg::model {

template <typename T>
const Parameter<T>& ModelParams<T>::find(std::string_view name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw ContractViolation("no parameter named '" + std::string(name) + "'");
}

template <typename T>
std::size_t ModelParams<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) {
    if (is_trainable(e.role)) n += e.value.size();
  }
  return n;
}

template <typename T>
ModelParams<T> build_model(const ArchitectureSpec& spec, std::uint64_t seed) {
  ModelParams<T> params;
  params.seed = seed;
  Rng rng(seed);
  for (const auto& slot : param_layout(spec)) {
    ad::Tensor<T> value(slot.shape);
    switch (slot.role) {
      case ParamRole::kWeight: {
        const double gain = slot.output_layer ? 1.0 : 2.0;
        const double stddev = std::sqrt(gain / static_cast<double>(slot.fan_in));
        for (auto& v : value.data()) v = static_cast<T>(normal(rng, 0.0, stddev));
        break;
      }
      case ParamRole::kGamma:
      case ParamRole::kRunningVar:
        value.fill(T{1});
        break;
      case ParamRole::kBias:
      case ParamRole::kBeta:
      case ParamRole::kRunningMean:
        break;
    }
    params.entries.push_back({slot.name, slot.role, std::move(value)});
  }
  return params;
}

template <typename T>
void validate_params(const ArchitectureSpec& spec, const ModelParams<T>& params) {
  const auto layout = param_layout(spec);
  if (layout.size() != params.entries.size()) {
    throw ContractViolation("parameter set has " + std::to_string(params.entries.size()) +
                            " tensors, architecture expects " + std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& e = params.entries[i];
    if (e.name != layout[i].name || e.role != layout[i].role || e.value.shape() != layout[i].shape) {
      throw ContractViolation("parameter " + std::to_string(i) + " is '" + e.name + "' " +
                              ad::shape_string(e.value.shape()) + ", architecture expects '" + layout[i].name +
                              "' " + ad::shape_string(layout[i].shape));
    }
  }
}

template <typename T>
Network<T>::Network(ArchitectureSpec spec, ModelParams<T> params) : spec_(std::move(spec)), params_(std::move(params)) {
  validate_params(spec_, params_);
}

namespace {

// Hands out parameters in layout order.
template <typename T>
class ParamCursor {
 public:
  ParamCursor(std::vector<ad::Var>& vars, ModelParams<T>& params) : vars_(vars), params_(params) {}

  ad::Var var() { return vars_[next_++]; }
  ad::Tensor<T>& state() { return params_.entries[next_++].value; }
  bool done() const { return next_ == vars_.size(); }

 private:
  std::vector<ad::Var>& vars_;
  ModelParams<T>& params_;
  std::size_t next_ = 0;
};

template <typename T>
ad::Var bn_relu(ad::Tape<T>& tape, ad::Var x, ParamCursor<T>& p, ad::Mode mode) {
  const ad::Var gamma = p.var();
  const ad::Var beta = p.var();
  auto& rm = p.state();
  auto& rv = p.state();
  return ad::relu(tape, ad::batch_norm(tape, x, gamma, beta, mode, rm, rv));
}

}  // namespace

template <typename T>
ForwardResult<T> Network<T>::forward(ad::Tape<T>& tape, ad::Var input, ad::Mode mode, Rng* rng,
                                     const ForwardOptions& options) {
  std::vector<ad::Var> trainable;
  for (const auto& e : params_.entries) {
    if (is_trainable(e.role)) trainable.push_back(tape.leaf(e.value, options.param_grads));
  }
  return forward_bound(tape, input, trainable, mode, rng, options);
}

template <typename T>
ForwardResult<T> Network<T>::forward_bound(ad::Tape<T>& tape, ad::Var input, std::span<const ad::Var> trainable,
                                           ad::Mode mode, Rng* rng, const ForwardOptions& options) {
  const auto& in_shape = tape.value(input).shape();
  const ad::Shape expected_tail{static_cast<std::size_t>(spec_.input_channels),
                                static_cast<std::size_t>(spec_.input_side),
                                static_cast<std::size_t>(spec_.input_side)};
  if (in_shape.size() != 4 || !std::equal(expected_tail.begin(), expected_tail.end(), in_shape.begin() + 1)) {
    throw ContractViolation("network input must be N x " + std::to_string(spec_.input_channels) + " x " +
                            std::to_string(spec_.input_side) + " x " + std::to_string(spec_.input_side) + ", got " +
                            ad::shape_string(in_shape));
  }
  if (mode == ad::Mode::kTrain && rng == nullptr && spec_.dropout > 0.0) {
    throw ContractViolation("train-mode forward needs a dropout RNG");
  }
  Rng unused(0);
  Rng& drop_rng = rng != nullptr ? *rng : unused;
  const std::size_t batch = in_shape[0];

  ForwardResult<T> result;
  result.param_vars.reserve(params_.entries.size());
  std::size_t next_trainable = 0;
  for (const auto& e : params_.entries) {
    if (is_trainable(e.role)) {
      if (next_trainable >= trainable.size()) throw ContractViolation("too few bound parameter variables");
      const ad::Var v = trainable[next_trainable++];
      if (tape.value(v).shape() != e.value.shape()) {
        throw ContractViolation("bound variable for '" + e.name + "' has shape " +
                                ad::shape_string(tape.value(v).shape()) + ", expected " +
                                ad::shape_string(e.value.shape()));
      }
      result.param_vars.push_back(v);
    } else {
      result.param_vars.push_back(ad::Var{});  // placeholder; state is read in place
    }
  }
  if (next_trainable != trainable.size()) throw ContractViolation("too many bound parameter variables");
  ParamCursor<T> p(result.param_vars, params_);

  ad::Var x = input;
  if (spec_.variant == Variant::kDenseNetBS) {
    x = ad::conv2d(tape, x, p.var(), 1, spec_.stem_kernel / 2);
    x = ad::max_pool2x2(tape, x);
    for (int b = 0; b < spec_.dense_blocks; ++b) {
      std::vector<ad::Var> block_maps{x};  // feeds the block output
      std::vector<ad::Var> layer_maps{x};  // feeds the next layer
      for (int l = 0; l < spec_.layers_per_block; ++l) {
        const ad::Var cat = layer_maps.size() == 1 ? layer_maps[0] : ad::concat_channels<T>(tape, layer_maps);
        ad::Var h = bn_relu(tape, cat, p, mode);
        h = ad::conv2d(tape, h, p.var(), 1, 1);
        h = ad::dropout(tape, h, spec_.dropout, mode, drop_rng);
        block_maps.push_back(h);
        layer_maps.push_back(options.isolate_dense_paths ? tape.constant(tape.value(h)) : h);
      }
      x = ad::concat_channels<T>(tape, block_maps);
      if (b + 1 < spec_.dense_blocks) {
        x = bn_relu(tape, x, p, mode);
        x = ad::conv2d(tape, x, p.var(), 1, 0);
        x = ad::avg_pool2x2(tape, x);
      }
    }
    x = bn_relu(tape, x, p, mode);
    x = ad::max_pool2x2(tape, x);
  } else {
    for (std::size_t s = 0; s < spec_.baseline_filters.size(); ++s) {
      x = ad::conv2d(tape, x, p.var(), 1, 1);
      x = bn_relu(tape, x, p, mode);
      if (s != 3) x = ad::max_pool2x2(tape, x);
    }
  }
  const std::size_t features = tape.value(x).size() / batch;
  x = ad::reshape(tape, x, {batch, features});
  {
    const ad::Var w = p.var();
    const ad::Var bias = p.var();
    x = ad::relu(tape, ad::fully_connected(tape, x, w, bias));
  }
  {
    const ad::Var w = p.var();
    const ad::Var bias = p.var();
    x = ad::fully_connected(tape, x, w, bias);
  }
  const auto side = static_cast<std::size_t>(spec_.output_side);
  x = ad::reshape(tape, x, {batch, side, side});
  result.probabilities = ad::sigmoid(tape, x);
  if (!p.done()) throw Error("forward pass did not consume every parameter");
  return result;
}

template <typename T>
ad::Tensor<T> Network<T>::predict(const ad::Tensor<T>& batch) {
  ad::Tape<T> tape;
  const ad::Var in = tape.constant(batch);
  const auto out = forward(tape, in, ad::Mode::kInfer, nullptr, {.param_grads = false});
  return tape.value(out.probabilities);
}

template class Network<float>;
template class Network<double>;
template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<float> build_model<float>(const ArchitectureSpec&, std::uint64_t);
template ModelParams<double> build_model<double>(const ArchitectureSpec&, std::uint64_t);
template void validate_params<float>(const ArchitectureSpec&, const ModelParams<float>&);
template void validate_params<double>(const ArchitectureSpec&, const ModelParams<double>&);

}  // namespace bseg::model
