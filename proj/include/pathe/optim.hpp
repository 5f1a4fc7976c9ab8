#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pathe/autodiff.hpp"

namespace pathe::ad {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are created lazily per parameter
// and keyed by position in the ParameterSet.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  // Applies one update from the accumulated gradients. Throws NumericError
  // naming the first parameter with a non-finite gradient; no parameter is
  // modified in that case.
  void step(ParameterSet<T>& params);

  std::uint64_t steps() const noexcept { return step_; }
  const AdamOptions& options() const noexcept { return options_; }

 private:
  AdamOptions options_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace pathe::ad
