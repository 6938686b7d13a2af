#include "bseg/ad/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bseg/common/error.hpp"
#include "bseg/common/rng.hpp"

namespace bseg::ad {

namespace {

struct Evaluation {
  double value;
  std::uint64_t signature;
};

Evaluation evaluate(const ScalarFn& fn, const std::vector<Tensor<double>>& point, bool with_grad,
                    std::vector<Tensor<double>>* grads) {
  Tape<double> tape;
  std::vector<Var> vars;
  vars.reserve(point.size());
  for (const auto& p : point) vars.push_back(tape.leaf(p, with_grad));
  const Var out = fn(tape, vars);
  if (tape.value(out).size() != 1) {
    throw ContractViolation("grad_check: function must be scalar-valued, got " +
                            shape_string(tape.value(out).shape()));
  }
  const double v = tape.value(out)[0];
  if (!std::isfinite(v)) throw Error("grad_check: function evaluated to a non-finite value");
  if (with_grad) {
    tape.backward(out);
    grads->clear();
    for (std::size_t i = 0; i < vars.size(); ++i) {
      const auto& g = tape.grad(vars[i]);
      grads->push_back(g.empty() ? Tensor<double>(point[i].shape()) : g);
    }
  }
  return {v, activation_signature(tape)};
}

}  // namespace

template <typename T>
std::uint64_t activation_signature(const Tape<T>& tape) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&h](std::uint64_t v) { h = mix_seed(h ^ v); };
  for (const auto& node : tape.nodes()) {
    if (node.kind == OpKind::kRelu) {
      const auto& x = tape.value(node.inputs[0]);
      std::uint64_t word = 0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        word = (word << 1) | (x[i] > T{0} ? 1u : 0u);
        if (i % 64 == 63) {
          mix(word);
          word = 0;
        }
      }
      mix(word);
    } else if (node.kind == OpKind::kMaxPool2x2) {
      const auto& x = tape.value(node.inputs[0]);
      const auto w = x.dim(3);
      const auto planes = x.dim(0) * x.dim(1);
      const auto h2 = x.dim(2) / 2, w2 = w / 2;
      for (std::size_t p = 0; p < planes; ++p) {
        const T* base = x.ptr() + p * x.dim(2) * w;
        std::uint64_t word = 0;
        for (std::size_t oy = 0; oy < h2; ++oy) {
          for (std::size_t ox = 0; ox < w2; ++ox) {
            const T c[4] = {base[2 * oy * w + 2 * ox], base[2 * oy * w + 2 * ox + 1],
                            base[(2 * oy + 1) * w + 2 * ox], base[(2 * oy + 1) * w + 2 * ox + 1]};
            unsigned best = 0;
            for (unsigned i = 1; i < 4; ++i) {
              if (c[i] > c[best]) best = i;
            }
            word = (word << 2) | best;
            if ((oy * w2 + ox) % 32 == 31) {
              mix(word);
              word = 0;
            }
          }
        }
        mix(word);
      }
    }
  }
  return h;
}

template std::uint64_t activation_signature<float>(const Tape<float>&);
template std::uint64_t activation_signature<double>(const Tape<double>&);

GradCheckReport grad_check(const ScalarFn& fn, std::vector<Tensor<double>> point, const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw ContractViolation("grad_check: eps must be positive");
  std::vector<Tensor<double>> analytic;
  const Evaluation base = evaluate(fn, point, true, &analytic);

  // Flat (tensor, index) coordinate list.
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < point.size(); ++t) {
    for (std::size_t i = 0; i < point[t].size(); ++i) coords.emplace_back(t, i);
  }
  if (options.max_coordinates > 0 && options.max_coordinates < coords.size()) {
    Rng rng(options.seed);
    for (std::size_t i = 0; i < options.max_coordinates; ++i) {
      const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                          static_cast<std::int64_t>(coords.size() - 1)));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(options.max_coordinates);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckReport report;
  for (auto [t, i] : coords) {
    const double orig = point[t][i];
    point[t][i] = orig + options.eps;
    const Evaluation plus = evaluate(fn, point, false, nullptr);
    point[t][i] = orig - options.eps;
    const Evaluation minus = evaluate(fn, point, false, nullptr);
    point[t][i] = orig;
    if (options.skip_kinks && (plus.signature != base.signature || minus.signature != base.signature)) {
      ++report.skipped_kinks;
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * options.eps);
    const double a = analytic[t][i];
    const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
    const double err = std::abs(a - numeric) / denom;
    ++report.checked;
    if (err > report.max_rel_error || report.checked == 1) {
      report.max_rel_error = std::max(err, report.max_rel_error);
      if (err >= report.max_rel_error) {
        report.worst_tensor = t;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.checked > 0 && report.max_rel_error < options.tolerance;
  return report;
}

GradCheckReport grad_check(const std::function<Var(Tape<double>&, Var)>& fn, Tensor<double> point,
                           const GradCheckOptions& options) {
  std::vector<Tensor<double>> pts;
  pts.push_back(std::move(point));
  return grad_check([&fn](Tape<double>& tape, std::span<const Var> v) { return fn(tape, v[0]); }, std::move(pts),
                    options);
}

}  // namespace bseg::ad
