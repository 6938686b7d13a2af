#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bseg/ad/ops.hpp"
#include "bseg/model/architecture.hpp"

namespace bseg::model {

template <typename T>
struct Parameter {
  std::string name;
  ParamRole role = ParamRole::kWeight;
  ad::Tensor<T> value;

  friend bool operator==(const Parameter&, const Parameter&) = default;
};

// Named parameter tensors in forward-consumption order, plus the seed they
// were initialized from.
template <typename T>
struct ModelParams {
  std::vector<Parameter<T>> entries;
  std::uint64_t seed = 0;

  const Parameter<T>& find(std::string_view name) const;
  std::size_t trainable_count() const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.seed = seed;
    for (const auto& e : entries) out.entries.push_back({e.name, e.role, e.value.template cast<U>()});
    return out;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Deterministic initialization: He fan-in scaling for convolutions and the
// hidden FC layer, unit-gain fan-in scaling for the output layer, zero biases,
// gamma = 1, beta = 0, running statistics (0, 1).
template <typename T>
ModelParams<T> build_model(const ArchitectureSpec& spec, std::uint64_t seed);

// Throws ContractViolation unless params match param_layout(spec) exactly.
template <typename T>
void validate_params(const ArchitectureSpec& spec, const ModelParams<T>& params);

struct ForwardOptions {
  // Bind parameters as differentiable leaves.
  bool param_grads = true;
  // Diagnostic: later dense layers read detached copies of earlier feature
  // maps, so gradients reach a layer only through its block's output concat.
  bool isolate_dense_paths = false;
};

template <typename T>
struct ForwardResult {
  ad::Var probabilities;           // N x side x side
  std::vector<ad::Var> param_vars; // aligned with ModelParams::entries
};

template <typename T>
class Network {
 public:
  Network(ArchitectureSpec spec, ModelParams<T> params);

  const ArchitectureSpec& spec() const { return spec_; }
  const ModelParams<T>& params() const { return params_; }
  ModelParams<T>& params() { return params_; }

  // input: N x C x side x side. Train mode updates batch-norm running stats
  // and needs a dropout RNG.
  ForwardResult<T> forward(ad::Tape<T>& tape, ad::Var input, ad::Mode mode, Rng* rng,
                           const ForwardOptions& options = {});

  // Same, reading trainable parameters from caller-owned tape variables
  // (one per trainable entry, in order) instead of binding fresh leaves.
  // Batch-norm running statistics still come from params().
  ForwardResult<T> forward_bound(ad::Tape<T>& tape, ad::Var input, std::span<const ad::Var> trainable, ad::Mode mode,
                                 Rng* rng, const ForwardOptions& options = {});

  // Infer-mode probabilities, N x side x side.
  ad::Tensor<T> predict(const ad::Tensor<T>& batch);

 private:
  ArchitectureSpec spec_;
  ModelParams<T> params_;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace bseg::model
