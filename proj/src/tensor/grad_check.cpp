#include "embedpipe/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "embedpipe/optim.hpp"

namespace embedpipe {

double grad_check(const LossBuilder& fn, std::span<Tensor* const> params, const GradCheckOptions& options) {
  zero_grads(params);
  {
    Graph g;
    g.backward(fn(g));
  }
  std::vector<std::vector<double>> analytic;
  for (const Tensor* p : params) analytic.emplace_back(p->grad().begin(), p->grad().end());

  auto evaluate = [&] {
    Graph g;
    return fn(g).value().item();
  };

  const double h = options.fd_step;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    std::size_t stride = 1;
    if (options.max_entries_per_param > 0 && p.size() > options.max_entries_per_param) {
      stride = (p.size() + options.max_entries_per_param - 1) / options.max_entries_per_param;
    }
    for (std::size_t j = 0; j < p.size(); j += stride) {
      const double saved = p[j];
      p[j] = saved + h;
      const double up = evaluate();
      p[j] = saved - h;
      const double down = evaluate();
      p[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[i][j] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace embedpipe
