#pragma once

#include <cstdint>
#include <span>

namespace bseg::model {

// Random-access patch provider used by training and scoring. Implementations
// must be safe for concurrent const access.
class SampleSource {
 public:
  virtual ~SampleSource() = default;

  virtual std::size_t size() const = 0;
  virtual std::uint32_t sample_id(std::size_t index) const = 0;
  virtual std::size_t input_size() const = 0;   // C * side * side
  virtual std::size_t target_size() const = 0;  // out_side * out_side
  virtual void fill_input(std::size_t index, std::span<float> out) const = 0;
  virtual void fill_target(std::size_t index, std::span<float> out) const = 0;
};

}  // namespace bseg::model
