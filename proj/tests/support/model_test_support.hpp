#pragma once

#include <algorithm>
#include <vector>

#include "bseg/common/rng.hpp"
#include "bseg/model/sample_source.hpp"

namespace bseg::testing {

// Minimal in-memory source for model tests.
class VectorSource : public model::SampleSource {
 public:
  VectorSource(std::size_t input_size, std::size_t target_size) : in_(input_size), out_(target_size) {}

  void add(std::vector<float> input, std::vector<float> target) {
    inputs_.push_back(std::move(input));
    targets_.push_back(std::move(target));
  }

  std::size_t size() const override { return inputs_.size(); }
  std::uint32_t sample_id(std::size_t i) const override { return static_cast<std::uint32_t>(i); }
  std::size_t input_size() const override { return in_; }
  std::size_t target_size() const override { return out_; }
  void fill_input(std::size_t i, std::span<float> out) const override {
    std::copy(inputs_[i].begin(), inputs_[i].end(), out.begin());
  }
  void fill_target(std::size_t i, std::span<float> out) const override {
    std::copy(targets_[i].begin(), targets_[i].end(), out.begin());
  }

 private:
  std::size_t in_, out_;
  std::vector<std::vector<float>> inputs_, targets_;
};

inline VectorSource separable_corpus() {
  // 4 all-building patches (tall depth, red roofs) and 4 empty ones.
  VectorSource src(4 * 80 * 80, 576);
  Rng rng(11);
  for (int i = 0; i < 8; ++i) {
    const bool building = i % 2 == 0;
    std::vector<float> in(4 * 6400);
    for (int p = 0; p < 6400; ++p) {
      const float jitter = static_cast<float>(normal(rng, 0.0, 0.02));
      in[0 * 6400 + p] = (building ? 0.3f : -0.2f) + jitter;
      in[1 * 6400 + p] = (building ? -0.2f : 0.1f) + jitter;
      in[2 * 6400 + p] = (building ? -0.2f : -0.1f) + jitter;
      in[3 * 6400 + p] = building ? 0.0f : -0.5f;
    }
    src.add(std::move(in), std::vector<float>(576, building ? 1.0f : 0.0f));
  }
  return src;
}

}  // namespace bseg::testing
