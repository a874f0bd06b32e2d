#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "embedpipe/tensor.hpp"

namespace embedpipe {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers for one parameter list, in the order the list was given.
struct OptimizerState {
  AdamConfig config;
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::uint64_t step = 0;

  OptimizerState() = default;
  OptimizerState(AdamConfig cfg, std::span<Tensor* const> params);
};

/// One bias-corrected Adam update using each parameter's grad buffer.
/// Parameters without a grad buffer are treated as having zero gradient.
/// Throws FrozenParameterError for parameters that do not require grad and
/// ShapeError when the state was built for differently shaped parameters.
void adam_step(std::span<Tensor* const> params, OptimizerState& state);

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor* const> params, double max_norm);

void zero_grads(std::span<Tensor* const> params);

}  // namespace embedpipe
