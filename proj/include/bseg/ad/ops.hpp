#pragma once

#include <span>

#include "bseg/ad/tape.hpp"
#include "bseg/common/rng.hpp"

namespace bseg::ad {

struct BatchNormOptions {
  double epsilon = 1e-5;
  // running = momentum * running + (1 - momentum) * batch
  double momentum = 0.9;
};

// input NCHW, kernels OIHW. No bias: every convolution in the network is
// followed by batch norm or pooling into batch norm.
template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var kernels, int stride = 1, int padding = 0);

// 2x2 window, stride 2. Ties route the gradient to the first element of the
// window in row-major order.
template <typename T>
Var max_pool2x2(Tape<T>& tape, Var input);

template <typename T>
Var avg_pool2x2(Tape<T>& tape, Var input);

// Per-channel normalization over (N, H, W). Train mode uses batch statistics
// and updates the running estimates in place (unbiased variance); infer mode
// reads them.
template <typename T>
Var batch_norm(Tape<T>& tape, Var input, Var gamma, Var beta, Mode mode, Tensor<T>& running_mean,
               Tensor<T>& running_var, const BatchNormOptions& options = {});

template <typename T>
Var relu(Tape<T>& tape, Var input);

// Inverted dropout: survivors are scaled by 1/(1-rate) at train time.
template <typename T>
Var dropout(Tape<T>& tape, Var input, double rate, Mode mode, Rng& rng);

template <typename T>
Var concat_channels(Tape<T>& tape, std::span<const Var> inputs);

// input N x D, weights D x M, bias M.
template <typename T>
Var fully_connected(Tape<T>& tape, Var input, Var weights, Var bias);

template <typename T>
Var sigmoid(Tape<T>& tape, Var input);

template <typename T>
Var reshape(Tape<T>& tape, Var input, Shape shape);

// Scalar reductions.
template <typename T>
Var sum(Tape<T>& tape, Var input);

// sum_i input[i] * weights[i] with constant weights.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var input, const Tensor<T>& weights);

template <typename T>
Var half_squared_norm(Tape<T>& tape, Var input);

// Mean binary cross-entropy (natural log) over every element; the arguments
// of log(p) and log(1 - p) are floored at `clamp`. Inside the floor this is
// the exact derivative; beyond it the floored value stands in, so saturated
// wrong answers still receive a gradient.
template <typename T>
Var binary_cross_entropy(Tape<T>& tape, Var predictions, const Tensor<T>& targets,
                         double clamp = 1e-7);

}  // namespace bseg::ad
