#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "embedpipe/graph.hpp"

namespace embedpipe {

/// Builds a scalar loss from parameters bound into the given graph.
using LossBuilder = std::function<Var(Graph&)>;

struct GradCheckOptions {
  double fd_step = 1e-5;
  /// Checks at most this many entries per parameter (evenly strided); 0 = all.
  std::size_t max_entries_per_param = 0;
};

/// Compares backward() against central differences over every checked entry
/// and returns max |analytic - numeric| / max(1, |numeric|).
/// `fn` must be deterministic and bind each of `params` via Graph::parameter.
/// Parameter grads are overwritten.
double grad_check(const LossBuilder& fn, std::span<Tensor* const> params, const GradCheckOptions& options = {});

}  // namespace embedpipe
