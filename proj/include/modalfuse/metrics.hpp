#pragma once

#include <cstddef>
#include <span>

#include "modalfuse/autodiff.hpp"
#include "modalfuse/tensor.hpp"

namespace modalfuse {

// Lin's concordance correlation coefficient with biased (divide-by-N)
// moments. Returns 0 when the denominator vanishes.
double ccc(std::span<const double> x, std::span<const double> y);

// 1 - (CCC_valence + CCC_arousal) / 2 over every row of [N x 2] tensors,
// built from tape operations. `gold` should not require grad.
ad::Var ccc_loss(ad::Var pred, ad::Var gold);

struct EvalSummary {
  double ccc_valence = 0.0;
  double ccc_arousal = 0.0;
  std::size_t n_frames = 0;

  double mean() const { return 0.5 * (ccc_valence + ccc_arousal); }
};

// One CCC per attribute over all frames of the evaluation set.
EvalSummary eval_summary(const Tensor& predictions, const Tensor& labels);

}  // namespace modalfuse
