#include "bseg/ad/tape.hpp"

#include "bseg/common/error.hpp"

namespace bseg::ad {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kMaxPool2x2: return "max_pool2x2";
    case OpKind::kAvgPool2x2: return "avg_pool2x2";
    case OpKind::kBatchNorm: return "batch_norm";
    case OpKind::kRelu: return "relu";
    case OpKind::kDropout: return "dropout";
    case OpKind::kConcatChannels: return "concat_channels";
    case OpKind::kFullyConnected: return "fully_connected";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSum: return "sum";
    case OpKind::kWeightedSum: return "weighted_sum";
    case OpKind::kHalfSquaredNorm: return "half_squared_norm";
    case OpKind::kBinaryCrossEntropy: return "binary_cross_entropy";
  }
  return "unknown";
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  if (profile_ != nullptr) last_mark_ = Clock::now();
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
void Tape<T>::set_profile(OpProfile* profile) {
  profile_ = profile;
  last_mark_ = Clock::now();
}

template <typename T>
Var Tape<T>::record(OpKind kind, std::vector<Var> inputs, Tensor<T> value, BackwardFn backward) {
  Node n;
  n.kind = kind;
  for (Var in : inputs) {
    if (in.index >= nodes_.size()) throw ContractViolation("tape input refers to a future node");
    n.requires_grad = n.requires_grad || nodes_[in.index].requires_grad;
  }
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  if (profile_ != nullptr) {
    const auto now = Clock::now();
    const auto k = static_cast<std::size_t>(kind);
    profile_->forward_seconds[k] += std::chrono::duration<double>(now - last_mark_).count();
    ++profile_->calls[k];
    last_mark_ = now;
  }
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Tensor<T>* Tape<T>::grad_sink(Var v) {
  Node& n = nodes_.at(v.index);
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return &n.grad;
}

template <typename T>
std::size_t Tape<T>::backward(Var output) {
  if (value(output).size() != 1) {
    throw ContractViolation("backward() without a seed needs a scalar output, got " +
                            shape_string(value(output).shape()));
  }
  return backward(output, Tensor<T>(value(output).shape(), T{1}));
}

template <typename T>
std::size_t Tape<T>::backward(Var output, const Tensor<T>& seed) {
  if (seed.shape() != value(output).shape()) {
    throw ContractViolation("seed shape " + shape_string(seed.shape()) + " does not match output " +
                            shape_string(value(output).shape()));
  }
  Tensor<T>* sink = grad_sink(output);
  if (sink == nullptr) return 0;
  for (std::size_t i = 0; i < seed.size(); ++i) (*sink)[i] += seed[i];

  std::size_t visited = 0;
  for (std::size_t i = output.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    // The closure may write into other nodes' gradients but never into this
    // node's, so passing a reference is safe.
    if (profile_ != nullptr) {
      const auto start = Clock::now();
      n.backward(*this, n);
      profile_->backward_seconds[static_cast<std::size_t>(n.kind)] +=
          std::chrono::duration<double>(Clock::now() - start).count();
    } else {
      n.backward(*this, n);
    }
    ++visited;
  }
  return visited;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace bseg::ad
