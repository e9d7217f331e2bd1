#include "modalfuse/adam.hpp"

#include <cmath>

#include "modalfuse/error.hpp"

namespace modalfuse {

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state,
               const AdamOptions& options) {
  if (!(options.lr > 0.0)) throw Error(ErrorKind::kInvalidArgument, "adam: lr must be > 0");
  if (params.size() != grads.size()) {
    throw Error(ErrorKind::kDimension, "adam: " + std::to_string(params.size()) +
                                           " params but " + std::to_string(grads.size()) +
                                           " grads");
  }
  if (state.m.empty() && state.t == 0) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.shape(), 0.0);
      state.v.emplace_back(p.shape(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorKind::kDimension, "adam: state does not match parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || params[i].shape() != state.m[i].shape() ||
        params[i].shape() != state.v[i].shape()) {
      throw Error(ErrorKind::kDimension, "adam: shape mismatch at parameter " +
                                             std::to_string(i) + " " +
                                             shape_to_string(params[i].shape()) + " vs grad " +
                                             shape_to_string(grads[i].shape()));
    }
  }

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(options.beta1, t);
  const double correction2 = 1.0 - std::pow(options.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = options.beta1 * m[k] + (1.0 - options.beta1) * g[k];
      v[k] = options.beta2 * v[k] + (1.0 - options.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      p[k] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
  }
}

}  // namespace modalfuse
