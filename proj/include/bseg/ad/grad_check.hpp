#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bseg/ad/tape.hpp"

namespace bseg::ad {

struct GradCheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error, so exact zeros compare sanely.
  double abs_floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded sample of this many.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
  // Skip coordinates whose +/-eps probes change a relu mask or max-pool
  // winner; the function is not differentiable across such a step.
  bool skip_kinks = true;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
};

// fn must build a scalar on the tape from leaves bound to `inputs`, and be a
// deterministic function of their values (reseed any dropout RNG inside).
using ScalarFn = std::function<Var(Tape<double>&, std::span<const Var> inputs)>;

GradCheckReport grad_check(const ScalarFn& fn, std::vector<Tensor<double>> point,
                           const GradCheckOptions& options = {});

GradCheckReport grad_check(const std::function<Var(Tape<double>&, Var)>& fn, Tensor<double> point,
                           const GradCheckOptions& options = {});

// Fingerprint of every discrete choice made on the tape: relu masks and
// max-pool winners. Equal fingerprints mean the same smooth piece.
template <typename T>
std::uint64_t activation_signature(const Tape<T>& tape);

}  // namespace bseg::ad
