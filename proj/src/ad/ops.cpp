#include "bseg/ad/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "bseg/common/error.hpp"

namespace bseg::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.size() != rank) {
    throw ContractViolation(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                            ", got " + shape_string(s));
  }
}

struct ConvGeometry {
  std::size_t n, c, h, w;
  std::size_t o, kh, kw;
  std::size_t stride, pad;
  std::size_t ho, wo;

  std::size_t col_rows() const { return c * kh * kw; }
  std::size_t col_cols() const { return ho * wo; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Output columns [lo, hi) whose input column ox*stride + kx - pad is in range.
inline std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kx) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad), k = static_cast<std::ptrdiff_t>(kx);
  const auto s = static_cast<std::ptrdiff_t>(g.stride), w = static_cast<std::ptrdiff_t>(g.w);
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, (pad - k + s - 1) / s);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(g.wo), (w + pad - k + s - 1) / s);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const auto hw_out = g.col_cols();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * hw_out;
        const auto [lo, hi] = valid_columns(g, kx);
        const auto shift = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad);
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, T{0});
            continue;
          }
          const T* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          std::fill(dst, dst + lo, T{0});
          if (g.stride == 1) {
            std::copy(src + static_cast<std::ptrdiff_t>(lo) + shift, src + static_cast<std::ptrdiff_t>(hi) + shift,
                      dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) {
              dst[ox] = src[static_cast<std::ptrdiff_t>(ox * g.stride) + shift];
            }
          }
          std::fill(dst + hi, dst + g.wo, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const auto hw_out = g.col_cols();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * hw_out;
        const auto [lo, hi] = valid_columns(g, kx);
        const auto shift = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad);
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* src = row + oy * g.wo;
          if (g.stride == 1) {
            T* d = dst + shift;
            for (std::size_t ox = lo; ox < hi; ++ox) d[ox] += src[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[static_cast<std::ptrdiff_t>(ox * g.stride) + shift] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var kernels, int stride, int padding) {
  const auto& x = tape.value(input);
  const auto& k = tape.value(kernels);
  require_rank(x.shape(), 4, "conv2d", "input");
  require_rank(k.shape(), 4, "conv2d", "kernels");
  if (stride < 1 || padding < 0) throw ContractViolation("conv2d: stride must be >= 1 and padding >= 0");
  if (x.dim(1) != k.dim(1)) {
    throw ContractViolation("conv2d: input " + shape_string(x.shape()) + " has " + std::to_string(x.dim(1)) +
                            " channels but kernels " + shape_string(k.shape()) + " expect " +
                            std::to_string(k.dim(1)));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k.dim(0), k.dim(2), k.dim(3),
                 static_cast<std::size_t>(stride), static_cast<std::size_t>(padding), 0, 0};
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    throw ContractViolation("conv2d: kernels " + shape_string(k.shape()) + " larger than padded input " +
                            shape_string(x.shape()));
  }
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  Tensor<T> out({g.n, g.o, g.ho, g.wo});
  const ConstMatMap<T> wmat(k.ptr(), static_cast<Eigen::Index>(g.o), static_cast<Eigen::Index>(g.col_rows()));
  AlignedVector<T> col(g.is_pointwise() ? 0 : g.col_rows() * g.col_cols());
  const auto in_stride = g.c * g.h * g.w;
  const auto out_stride = g.o * g.col_cols();
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* src = x.ptr() + n * in_stride;
    if (!g.is_pointwise()) {
      im2col(src, g, col.data());
      src = col.data();
    }
    MatMap<T>(out.ptr() + n * out_stride, static_cast<Eigen::Index>(g.o), static_cast<Eigen::Index>(g.col_cols()))
        .noalias() = wmat * ConstMatMap<T>(src, static_cast<Eigen::Index>(g.col_rows()),
                                           static_cast<Eigen::Index>(g.col_cols()));
  }

  return tape.record(OpKind::kConv2d, {input, kernels}, std::move(out),
                     [input, kernels, g](Tape<T>& t, const TapeNode<T>& self) {
                       const auto& gout = self.grad;
                       Tensor<T>* gx = t.grad_sink(input);
                       Tensor<T>* gk = t.grad_sink(kernels);
                       const auto& xv = t.value(input);
                       const auto& kv = t.value(kernels);
                       const auto rows = static_cast<Eigen::Index>(g.col_rows());
                       const auto ncols = static_cast<Eigen::Index>(g.col_cols());
                       const auto o = static_cast<Eigen::Index>(g.o);
                       const ConstMatMap<T> wm(kv.ptr(), o, rows);
                       AlignedVector<T> col(g.is_pointwise() ? 0 : g.col_rows() * g.col_cols());
                       RowMat<T> dcol;
                       const auto in_stride = g.c * g.h * g.w;
                       const auto out_stride = g.o * g.col_cols();
                       for (std::size_t n = 0; n < g.n; ++n) {
                         const ConstMatMap<T> go(gout.ptr() + n * out_stride, o, ncols);
                         if (gk != nullptr) {
                           const T* src = xv.ptr() + n * in_stride;
                           if (!g.is_pointwise()) {
                             im2col(src, g, col.data());
                             src = col.data();
                           }
                           MatMap<T>(gk->ptr(), o, rows).noalias() += go * ConstMatMap<T>(src, rows, ncols).transpose();
                         }
                         if (gx != nullptr) {
                           if (g.is_pointwise()) {
                             MatMap<T>(gx->ptr() + n * in_stride, rows, ncols).noalias() += wm.transpose() * go;
                           } else {
                             dcol.noalias() = wm.transpose() * go;
                             col2im_add(dcol.data(), g, gx->ptr() + n * in_stride);
                           }
                         }
                       }
                     });
}

template <typename T>
Var max_pool2x2(Tape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  require_rank(x.shape(), 4, "max_pool2x2", "input");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ContractViolation("max_pool2x2: spatial dims must be even, got " + shape_string(x.shape()));
  }
  const auto ho = h / 2, wo = w / 2;
  Tensor<T> out({n, c, ho, wo});
  std::vector<std::uint32_t> argmax(out.size());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
        const std::size_t cand[4] = {base + (2 * oy) * w + 2 * ox, base + (2 * oy) * w + 2 * ox + 1,
                                     base + (2 * oy + 1) * w + 2 * ox, base + (2 * oy + 1) * w + 2 * ox + 1};
        std::size_t best = cand[0];
        for (int i = 1; i < 4; ++i) {
          if (x[cand[i]] > x[best]) best = cand[i];
        }
        out[o] = x[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return tape.record(OpKind::kMaxPool2x2, {input}, std::move(out),
                     [input, argmax = std::move(argmax)](Tape<T>& t, const TapeNode<T>& self) {
    const auto& gout = self.grad;
                       Tensor<T>* gx = t.grad_sink(input);
                       if (gx == nullptr) return;
                       for (std::size_t i = 0; i < gout.size(); ++i) (*gx)[argmax[i]] += gout[i];
                     });
}

template <typename T>
Var avg_pool2x2(Tape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  require_rank(x.shape(), 4, "avg_pool2x2", "input");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ContractViolation("avg_pool2x2: spatial dims must be even, got " + shape_string(x.shape()));
  }
  const auto ho = h / 2, wo = w / 2;
  Tensor<T> out({n, c, ho, wo});
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* p = x.ptr() + plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
        const T* r0 = p + 2 * oy * w + 2 * ox;
        const T* r1 = r0 + w;
        out[o] = T(0.25) * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
    }
  }
  return tape.record(OpKind::kAvgPool2x2, {input}, std::move(out),
                     [input, h, w, ho, wo](Tape<T>& t, const TapeNode<T>& self) {
    const auto& gout = self.grad;
                       Tensor<T>* gx = t.grad_sink(input);
                       if (gx == nullptr) return;
                       const std::size_t planes = gout.size() / (ho * wo);
                       std::size_t o = 0;
                       for (std::size_t plane = 0; plane < planes; ++plane) {
                         T* p = gx->ptr() + plane * h * w;
                         for (std::size_t oy = 0; oy < ho; ++oy) {
                           for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
                             const T gv = T(0.25) * gout[o];
                             T* r0 = p + 2 * oy * w + 2 * ox;
                             T* r1 = r0 + w;
                             r0[0] += gv;
                             r0[1] += gv;
                             r1[0] += gv;
                             r1[1] += gv;
                           }
                         }
                       }
                     });
}

// Fixed 8-lane partial sums: vectorizable, and the summation order depends
// only on the length, so results are reproducible.
template <typename T>
double lane_sum(const T* p, std::size_t len, double shift = 0.0) {
  double acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= len; i += 8) {
    for (int j = 0; j < 8; ++j) acc[j] += static_cast<double>(p[i + j]) - shift;
  }
  for (; i < len; ++i) acc[0] += static_cast<double>(p[i]) - shift;
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <typename T>
double lane_sq_dev(const T* p, std::size_t len, double mu) {
  double acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= len; i += 8) {
    for (int j = 0; j < 8; ++j) {
      const double d = static_cast<double>(p[i + j]) - mu;
      acc[j] += d * d;
    }
  }
  for (; i < len; ++i) {
    const double d = static_cast<double>(p[i]) - mu;
    acc[0] += d * d;
  }
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <typename T>
double lane_dot(const T* a, const T* b, std::size_t len) {
  double acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= len; i += 8) {
    for (int j = 0; j < 8; ++j) acc[j] += static_cast<double>(a[i + j]) * static_cast<double>(b[i + j]);
  }
  for (; i < len; ++i) acc[0] += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <typename T>
Var batch_norm(Tape<T>& tape, Var input, Var gamma, Var beta, Mode mode, Tensor<T>& running_mean,
               Tensor<T>& running_var, const BatchNormOptions& options) {
  const auto& x = tape.value(input);
  const auto& gm = tape.value(gamma);
  const auto& bt = tape.value(beta);
  require_rank(x.shape(), 4, "batch_norm", "input");
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const Shape channel_shape{c};
  if (gm.shape() != channel_shape || bt.shape() != channel_shape || running_mean.shape() != channel_shape ||
      running_var.shape() != channel_shape) {
    throw ContractViolation("batch_norm: per-channel parameters must have shape " + shape_string(channel_shape) +
                            " for input " + shape_string(x.shape()));
  }
  if (mode == Mode::kTrain && n < 2) {
    throw ContractViolation("batch_norm: train mode needs a batch of at least 2, got " + shape_string(x.shape()));
  }

  std::vector<T> mean(c), inv_std(c);
  const double count = static_cast<double>(n * hw);
  if (mode == Mode::kTrain) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) s += lane_sum(x.ptr() + (b * c + ch) * hw, hw);
      const double mu = s / count;
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b) ss += lane_sq_dev(x.ptr() + (b * c + ch) * hw, hw, mu);
      const double var = ss / count;
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + options.epsilon));
      running_mean[ch] = static_cast<T>(options.momentum * running_mean[ch] + (1.0 - options.momentum) * mu);
      running_var[ch] = static_cast<T>(options.momentum * running_var[ch] +
                                       (1.0 - options.momentum) * var * count / (count - 1.0));
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + options.epsilon));
    }
  }

  Tensor<T> xhat(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * hw;
      const T* xp = x.ptr() + off;
      T* hp = xhat.ptr() + off;
      T* op = out.ptr() + off;
      const T mu = mean[ch], is = inv_std[ch], g = gm[ch], be = bt[ch];
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = (xp[i] - mu) * is;
        hp[i] = xh;
        op[i] = g * xh + be;
      }
    }
  }

  return tape.record(
      OpKind::kBatchNorm, {input, gamma, beta}, std::move(out),
      [input, gamma, beta, mode, n, c, hw, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<T>& t, const TapeNode<T>& self) {
        const auto& gout = self.grad;
        Tensor<T>* gx = t.grad_sink(input);
        Tensor<T>* gg = t.grad_sink(gamma);
        Tensor<T>* gb = t.grad_sink(beta);
        const auto& gmv = t.value(gamma);
        const double count = static_cast<double>(n * hw);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            sum_dy += lane_sum(gout.ptr() + off, hw);
            sum_dy_xhat += lane_dot(gout.ptr() + off, xhat.ptr() + off, hw);
          }
          if (gg != nullptr) (*gg)[ch] += static_cast<T>(sum_dy_xhat);
          if (gb != nullptr) (*gb)[ch] += static_cast<T>(sum_dy);
          if (gx == nullptr) continue;
          const double scale = static_cast<double>(gmv[ch]) * inv_std[ch];
          const T a = static_cast<T>(scale);
          const T m1 = mode == Mode::kTrain ? static_cast<T>(sum_dy / count) : T{0};
          const T m2 = mode == Mode::kTrain ? static_cast<T>(sum_dy_xhat / count) : T{0};
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            const T* gp = gout.ptr() + off;
            const T* hp = xhat.ptr() + off;
            T* dp = gx->ptr() + off;
            for (std::size_t i = 0; i < hw; ++i) dp[i] += a * (gp[i] - m1 - hp[i] * m2);
          }
        }
      });
}

template <typename T>
Var relu(Tape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  return tape.record(OpKind::kRelu, {input}, std::move(out), [input](Tape<T>& t, const TapeNode<T>& self) {
    const auto& gout = self.grad;
    Tensor<T>* gx = t.grad_sink(input);
    if (gx == nullptr) return;
    const T* xp = t.value(input).ptr();
    const T* gp = gout.ptr();
    T* dp = gx->ptr();
    for (std::size_t i = 0; i < gout.size(); ++i) dp[i] += xp[i] > T{0} ? gp[i] : T{0};
  });
}

template <typename T>
Var dropout(Tape<T>& tape, Var input, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractViolation("dropout: rate must lie in [0, 1)");
  const auto& x = tape.value(input);
  if (mode == Mode::kInfer || rate == 0.0) {
    Tensor<T> out = x;
    return tape.record(OpKind::kDropout, {input}, std::move(out), [input](Tape<T>& t, const TapeNode<T>& self) {
    const auto& gout = self.grad;
      Tensor<T>* gx = t.grad_sink(input);
      if (gx == nullptr) return;
      for (std::size_t i = 0; i < gout.size(); ++i) (*gx)[i] += gout[i];
    });
  }
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = uniform01(rng) < rate ? T{0} : scale;
    out[i] = x[i] * mask[i];
  }
  return tape.record(OpKind::kDropout, {input}, std::move(out),
                     [input, mask = std::move(mask)](Tape<T>& t, const TapeNode<T>& self) {
    const auto& gout = self.grad;
                       Tensor<T>* gx = t.grad_sink(input);
                       if (gx == nullptr) return;
                       for (std::size_t i = 0; i < gout.size(); ++i) (*gx)[i] += gout[i] * mask[i];
                     });
}

template <typename T>
Var concat_channels(Tape<T>& tape, std::span<const Var> inputs) {
  if (inputs.empty()) throw ContractViolation("concat_channels: no inputs");
  const auto& first = tape.value(inputs[0]);
  require_rank(first.shape(), 4, "concat_channels", "input");
  const auto n = first.dim(0), h = first.dim(2), w = first.dim(3);
  std::vector<std::size_t> channels;
  std::size_t total = 0;
  for (Var v : inputs) {
    const auto& s = tape.value(v).shape();
    if (s.size() != 4 || s[0] != n || s[2] != h || s[3] != w) {
      throw ContractViolation("concat_channels: " + shape_string(s) + " does not agree with " +
                              shape_string(first.shape()) + " on N, H, W");
    }
    channels.push_back(s[1]);
    total += s[1];
  }
  const std::size_t hw = h * w;
  Tensor<T> out({n, total, h, w});
  for (std::size_t b = 0; b < n; ++b) {
    T* dst = out.ptr() + b * total * hw;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const auto& xv = tape.value(inputs[k]);
      const T* src = xv.ptr() + b * channels[k] * hw;
      dst = std::copy(src, src + channels[k] * hw, dst);
    }
  }
  std::vector<Var> ins(inputs.begin(), inputs.end());
  return tape.record(OpKind::kConcatChannels, ins, std::move(out),
                     [ins, channels, n, total, hw](Tape<T>& t, const TapeNode<T>& self) {
    const auto& gout = self.grad;
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < ins.size(); ++k) {
                         Tensor<T>* gx = t.grad_sink(ins[k]);
                         if (gx != nullptr) {
                           for (std::size_t b = 0; b < n; ++b) {
                             const T* src = gout.ptr() + (b * total + offset) * hw;
                             T* dst = gx->ptr() + b * channels[k] * hw;
                             for (std::size_t i = 0; i < channels[k] * hw; ++i) dst[i] += src[i];
                           }
                         }
                         offset += channels[k];
                       }
                     });
}

template <typename T>
Var fully_connected(Tape<T>& tape, Var input, Var weights, Var bias) {
  const auto& x = tape.value(input);
  const auto& wt = tape.value(weights);
  const auto& b = tape.value(bias);
  require_rank(x.shape(), 2, "fully_connected", "input");
  require_rank(wt.shape(), 2, "fully_connected", "weights");
  if (x.dim(1) != wt.dim(0) || b.shape() != Shape{wt.dim(1)}) {
    throw ContractViolation("fully_connected: input " + shape_string(x.shape()) + ", weights " +
                            shape_string(wt.shape()) + " and bias " + shape_string(b.shape()) + " disagree");
  }
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto d = static_cast<Eigen::Index>(x.dim(1));
  const auto m = static_cast<Eigen::Index>(wt.dim(1));
  Tensor<T> out({x.dim(0), wt.dim(1)});
  MatMap<T> y(out.ptr(), n, m);
  y.noalias() = ConstMatMap<T>(x.ptr(), n, d) * ConstMatMap<T>(wt.ptr(), d, m);
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.ptr(), m);
  return tape.record(OpKind::kFullyConnected, {input, weights, bias}, std::move(out),
                     [input, weights, bias, n, d, m](Tape<T>& t, const TapeNode<T>& self) {
    const auto& gout = self.grad;
                       const ConstMatMap<T> gy(gout.ptr(), n, m);
                       if (Tensor<T>* gx = t.grad_sink(input)) {
                         MatMap<T>(gx->ptr(), n, d).noalias() +=
                             gy * ConstMatMap<T>(t.value(weights).ptr(), d, m).transpose();
                       }
                       if (Tensor<T>* gw = t.grad_sink(weights)) {
                         MatMap<T>(gw->ptr(), d, m).noalias() +=
                             ConstMatMap<T>(t.value(input).ptr(), n, d).transpose() * gy;
                       }
                       if (Tensor<T>* gb = t.grad_sink(bias)) {
                         Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb->ptr(), m) += gy.colwise().sum();
                       }
                     });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    if (v >= T{0}) {
      out[i] = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T{1} + e);
    }
  }
  return tape.record(OpKind::kSigmoid, {input}, std::move(out), [input](Tape<T>& t, const TapeNode<T>& self) {
    Tensor<T>* gx = t.grad_sink(input);
    if (gx == nullptr) return;
    const auto& gout = self.grad;
    const auto& y = self.value;
    for (std::size_t i = 0; i < gout.size(); ++i) (*gx)[i] += gout[i] * y[i] * (T{1} - y[i]);
  });
}

template <typename T>
Var reshape(Tape<T>& tape, Var input, Shape shape) {
  Tensor<T> out = tape.value(input).reshaped(std::move(shape));
  return tape.record(OpKind::kReshape, {input}, std::move(out), [input](Tape<T>& t, const TapeNode<T>& self) {
    const auto& gout = self.grad;
    Tensor<T>* gx = t.grad_sink(input);
    if (gx == nullptr) return;
    for (std::size_t i = 0; i < gout.size(); ++i) (*gx)[i] += gout[i];
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  double s = 0.0;
  for (T v : x.data()) s += v;
  return tape.record(OpKind::kSum, {input}, Tensor<T>({1}, static_cast<T>(s)),
                     [input](Tape<T>& t, const TapeNode<T>& self) {
    const auto& gout = self.grad;
                       Tensor<T>* gx = t.grad_sink(input);
                       if (gx == nullptr) return;
                       for (auto& g : gx->data()) g += gout[0];
                     });
}

template <typename T>
Var weighted_sum(Tape<T>& tape, Var input, const Tensor<T>& weights) {
  const auto& x = tape.value(input);
  if (weights.size() != x.size()) {
    throw ContractViolation("weighted_sum: weights " + shape_string(weights.shape()) + " vs input " +
                            shape_string(x.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += static_cast<double>(x[i]) * weights[i];
  return tape.record(OpKind::kWeightedSum, {input}, Tensor<T>({1}, static_cast<T>(s)),
                     [input, weights](Tape<T>& t, const TapeNode<T>& self) {
    const auto& gout = self.grad;
                       Tensor<T>* gx = t.grad_sink(input);
                       if (gx == nullptr) return;
                       for (std::size_t i = 0; i < weights.size(); ++i) (*gx)[i] += gout[0] * weights[i];
                     });
}

template <typename T>
Var half_squared_norm(Tape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  double s = 0.0;
  for (T v : x.data()) s += static_cast<double>(v) * v;
  return tape.record(OpKind::kHalfSquaredNorm, {input}, Tensor<T>({1}, static_cast<T>(0.5 * s)),
                     [input](Tape<T>& t, const TapeNode<T>& self) {
    const auto& gout = self.grad;
                       Tensor<T>* gx = t.grad_sink(input);
                       if (gx == nullptr) return;
                       const auto& xv = t.value(input);
                       for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += gout[0] * xv[i];
                     });
}

template <typename T>
Var binary_cross_entropy(Tape<T>& tape, Var predictions, const Tensor<T>& targets, double clamp) {
  const auto& p = tape.value(predictions);
  if (p.shape() != targets.shape()) {
    throw ContractViolation("binary_cross_entropy: predictions " + shape_string(p.shape()) + " vs targets " +
                            shape_string(targets.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double y = targets[i];
    if (y != 0.0) s += y * std::log(std::max(static_cast<double>(p[i]), clamp));
    if (y != 1.0) s += (1.0 - y) * std::log(std::max(1.0 - p[i], clamp));
  }
  const double count = static_cast<double>(p.size());
  return tape.record(OpKind::kBinaryCrossEntropy, {predictions}, Tensor<T>({1}, static_cast<T>(-s / count)),
                     [predictions, targets, clamp, count](Tape<T>& t, const TapeNode<T>& self) {
    const auto& gout = self.grad;
                       Tensor<T>* gp = t.grad_sink(predictions);
                       if (gp == nullptr) return;
                       const auto& pv = t.value(predictions);
                       const double scale = static_cast<double>(gout[0]) / count;
                       for (std::size_t i = 0; i < pv.size(); ++i) {
                         const double y = targets[i];
                         const double pos = std::max(static_cast<double>(pv[i]), clamp);
                         const double neg = std::max(1.0 - pv[i], clamp);
                         (*gp)[i] += static_cast<T>(-scale * (y / pos - (1.0 - y) / neg));
                       }
                     });
}

#define BSEG_INSTANTIATE_OPS(T)                                                                               \
  template Var conv2d<T>(Tape<T>&, Var, Var, int, int);                                                       \
  template Var max_pool2x2<T>(Tape<T>&, Var);                                                                 \
  template Var avg_pool2x2<T>(Tape<T>&, Var);                                                                 \
  template Var batch_norm<T>(Tape<T>&, Var, Var, Var, Mode, Tensor<T>&, Tensor<T>&, const BatchNormOptions&); \
  template Var relu<T>(Tape<T>&, Var);                                                                        \
  template Var dropout<T>(Tape<T>&, Var, double, Mode, Rng&);                                                 \
  template Var concat_channels<T>(Tape<T>&, std::span<const Var>);                                            \
  template Var fully_connected<T>(Tape<T>&, Var, Var, Var);                                                   \
  template Var sigmoid<T>(Tape<T>&, Var);                                                                     \
  template Var reshape<T>(Tape<T>&, Var, Shape);                                                              \
  template Var sum<T>(Tape<T>&, Var);                                                                         \
  template Var weighted_sum<T>(Tape<T>&, Var, const Tensor<T>&);                                              \
  template Var half_squared_norm<T>(Tape<T>&, Var);                                                           \
  template Var binary_cross_entropy<T>(Tape<T>&, Var, const Tensor<T>&, double);

BSEG_INSTANTIATE_OPS(float)
BSEG_INSTANTIATE_OPS(double)

#undef BSEG_INSTANTIATE_OPS

}  // namespace bseg::ad
