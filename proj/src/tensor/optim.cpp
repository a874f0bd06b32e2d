#include "embedpipe/optim.hpp"

#include <cmath>
#include <string>

namespace embedpipe {

OptimizerState::OptimizerState(AdamConfig cfg, std::span<Tensor* const> params) : config(cfg) {
  first.reserve(params.size());
  second.reserve(params.size());
  for (const Tensor* p : params) {
    first.emplace_back(p->size(), 0.0);
    second.emplace_back(p->size(), 0.0);
  }
}

void adam_step(std::span<Tensor* const> params, OptimizerState& state) {
  if (params.size() != state.first.size() || params.size() != state.second.size()) {
    throw TensorError("adam_step: state tracks " + std::to_string(state.first.size()) + " parameters, got " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = *params[i];
    if (!p.requires_grad()) {
      throw FrozenParameterError("adam_step: parameter " + std::to_string(i) + " is frozen");
    }
    if (state.first[i].size() != p.size() || state.second[i].size() != p.size()) {
      throw ShapeError("adam_step", {p.shape()}, "moment buffers hold " + std::to_string(state.first[i].size()) +
                                                     " values");
    }
    if (p.has_grad() && p.grad().size() != p.size()) throw ShapeError("adam_step", {p.shape()}, "grad size");
  }

  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto& m = state.first[i];
    auto& v = state.second[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

double clip_grad_norm(std::span<Tensor* const> params, double max_norm) {
  double sq = 0.0;
  for (const Tensor* p : params) {
    for (double g : p->grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (Tensor* p : params) {
      for (double& g : p->grad()) g *= f;
    }
  }
  return norm;
}

void zero_grads(std::span<Tensor* const> params) {
  for (Tensor* p : params) p->zero_grad();
}

}  // namespace embedpipe
