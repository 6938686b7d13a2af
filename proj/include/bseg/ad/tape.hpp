#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "bseg/ad/tensor.hpp"

namespace bseg::ad {

enum class OpKind : std::uint8_t {
  kLeaf,
  kConv2d,
  kMaxPool2x2,
  kAvgPool2x2,
  kBatchNorm,
  kRelu,
  kDropout,
  kConcatChannels,
  kFullyConnected,
  kSigmoid,
  kReshape,
  kSum,
  kWeightedSum,
  kHalfSquaredNorm,
  kBinaryCrossEntropy,
};

std::string_view op_name(OpKind kind);
inline constexpr std::size_t kOpKindCount = static_cast<std::size_t>(OpKind::kBinaryCrossEntropy) + 1;

// Wall time per primitive kind. Forward time of an op is measured as the gap
// since the previous record()/leaf() on the same tape.
struct OpProfile {
  std::array<double, kOpKindCount> forward_seconds{};
  std::array<double, kOpKindCount> backward_seconds{};
  std::array<std::size_t, kOpKindCount> calls{};
};

enum class Mode : std::uint8_t { kTrain, kInfer };

// Handle to a node of a Tape.
struct Var {
  std::uint32_t index = 0;
  friend bool operator==(Var, Var) = default;
};

// Append-only record of executed primitives. Nodes are stored in execution
// order, so the record is topologically sorted by construction and backward()
// is a single reverse sweep. Gradients accumulate additively, which is what
// makes fan-out (a dense-block feature map consumed by every later layer)
// correct without special handling.
template <typename T>
class Tape;

template <typename T>
struct TapeNode {
  OpKind kind = OpKind::kLeaf;
  std::vector<Var> inputs;
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  // Receives the node itself: its value and accumulated output gradient.
  std::function<void(Tape<T>&, const TapeNode&)> backward;
};

template <typename T>
class Tape {
 public:
  using Node = TapeNode<T>;
  using BackwardFn = std::function<void(Tape&, const Node&)>;

  Var leaf(Tensor<T> value, bool requires_grad = true);
  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  // Records an executed primitive. The backward closure is dropped when no
  // input requires a gradient.
  Var record(OpKind kind, std::vector<Var> inputs, Tensor<T> value, BackwardFn backward);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.index).value; }
  const Tensor<T>& grad(Var v) const { return nodes_.at(v.index).grad; }
  bool requires_grad(Var v) const { return nodes_.at(v.index).requires_grad; }
  const Node& node(Var v) const { return nodes_.at(v.index); }
  std::span<const Node> nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  // Zero-initialized gradient buffer for v, or nullptr when v does not take
  // part in differentiation. For use inside backward closures.
  Tensor<T>* grad_sink(Var v);

  // Reverse sweep seeded with d(output)/d(output) = 1; output must be scalar.
  // Returns the number of primitives whose backward rule ran.
  std::size_t backward(Var output);
  std::size_t backward(Var output, const Tensor<T>& seed);

  // Accumulate timings into profile (nullptr disables).
  void set_profile(OpProfile* profile);

 private:
  using Clock = std::chrono::steady_clock;

  std::vector<Node> nodes_;
  OpProfile* profile_ = nullptr;
  Clock::time_point last_mark_{};
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace bseg::ad
