#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "modalfuse/tensor.hpp"

namespace modalfuse {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;
};

// Bias-corrected Adam update. Moments are lazily zero-initialised on the
// first step to match the parameter shapes.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads,
               AdamState& state, const AdamOptions& options);

}  // namespace modalfuse
