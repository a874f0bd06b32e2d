// Random inputs and per-op cases for finite-difference gradient checks.
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "embedpipe/graph.hpp"

namespace embedpipe::testing {


inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Values bounded away from zero (relu kink) with a random sign.
inline Tensor away_from_zero(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.5);
  std::bernoulli_distribution sign(0.5);
  Tensor t(shape);
  for (double& v : t.data()) v = sign(rng) ? u(rng) : -u(rng);
  return t;
}

// Reduces any output to a scalar through a fixed random weighting.
inline Var weighted_sum(Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Graph& g = *out.graph();
  Tensor w = random_tensor(out.shape(), rng);
  return sum(mul(out, g.constant(std::move(w))));
}

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>(std::mt19937_64&)> make_inputs;
  std::function<Var(Graph&, std::vector<Var>&)> apply;
};

inline std::vector<Tensor*> pointers(std::vector<Tensor>& ts) {
  std::vector<Tensor*> ps;
  for (Tensor& t : ts) {
    t.set_requires_grad(true);
    ps.push_back(&t);
  }
  return ps;
}

inline std::vector<OpCase> op_cases() {
  auto dims = [](std::mt19937_64& r) {
    std::uniform_int_distribution<std::size_t> d(1, 4);
    return std::pair{d(r), d(r)};
  };
  std::vector<OpCase> cases;
  cases.push_back({"matmul",
                   [=](auto& r) {
                     auto [m, k] = dims(r);
                     std::size_t n = dims(r).first;
                     return std::vector<Tensor>{random_tensor(Shape{m, k}, r), random_tensor(Shape{k, n}, r)};
                   },
                   [](Graph&, auto& v) { return matmul(v[0], v[1]); }});
  cases.push_back({"add",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m, n}, r), random_tensor(Shape{m, n}, r)};
                   },
                   [](Graph&, auto& v) { return add(v[0], v[1]); }});
  cases.push_back({"add_bias",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m, n}, r), random_tensor(Shape{n}, r)};
                   },
                   [](Graph&, auto& v) { return add(v[0], v[1]); }});
  cases.push_back({"sub",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m, n}, r), random_tensor(Shape{m, n}, r)};
                   },
                   [](Graph&, auto& v) { return sub(v[0], v[1]); }});
  cases.push_back({"mul",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m, n}, r), random_tensor(Shape{m, n}, r)};
                   },
                   [](Graph&, auto& v) { return mul(v[0], v[1]); }});
  cases.push_back({"scale",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m, n}, r)};
                   },
                   [](Graph&, auto& v) { return scale(v[0], -1.7); }});
  cases.push_back({"concat_cols",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     std::size_t n2 = dims(r).second;
                     return std::vector<Tensor>{random_tensor(Shape{m, n}, r), random_tensor(Shape{m, n2}, r)};
                   },
                   [](Graph&, auto& v) { return concat_cols(v); }});
  cases.push_back({"concat_rows",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     std::size_t m2 = dims(r).first;
                     return std::vector<Tensor>{random_tensor(Shape{m, n}, r), random_tensor(Shape{m2, n}, r)};
                   },
                   [](Graph&, auto& v) { return concat_rows(v); }});
  cases.push_back({"slice_rows",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m + 2, n}, r)};
                   },
                   [](Graph&, auto& v) { return slice_rows(v[0], 1, v[0].value().rows() - 2); }});
  cases.push_back({"slice_cols",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m, n + 2}, r)};
                   },
                   [](Graph&, auto& v) { return slice_cols(v[0], 2, v[0].value().cols() - 2); }});
  cases.push_back({"tile_rows",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m, n}, r)};
                   },
                   [](Graph&, auto& v) { return tile_rows(v[0], 3); }});
  cases.push_back({"select_rows",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m, n}, r), random_tensor(Shape{m, n}, r)};
                   },
                   [](Graph&, auto& v) {
                     std::vector<std::uint8_t> mask(v[0].value().rows());
                     for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = i % 2;
                     return select_rows(v[0], v[1], mask);
                   }});
  cases.push_back({"embedding",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m + 1, n}, r)};
                   },
                   [](Graph&, auto& v) {
                     const int rows = static_cast<int>(v[0].value().rows());
                     std::vector<int> ids{0, rows - 1, 0, rows / 2};
                     return embedding(v[0], ids);
                   }});
  cases.push_back({"tanh",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m, n}, r, -2, 2)};
                   },
                   [](Graph&, auto& v) { return tanh(v[0]); }});
  cases.push_back({"relu",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{away_from_zero(Shape{m, n}, r)};
                   },
                   [](Graph&, auto& v) { return relu(v[0]); }});
  cases.push_back({"sigmoid",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m, n}, r, -3, 3)};
                   },
                   [](Graph&, auto& v) { return sigmoid(v[0]); }});
  cases.push_back({"softmax",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m, n + 1}, r, -2, 2)};
                   },
                   [](Graph&, auto& v) { return softmax(v[0]); }});
  cases.push_back({"log_softmax",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m, n + 1}, r, -2, 2)};
                   },
                   [](Graph&, auto& v) { return log_softmax(v[0]); }});
  cases.push_back({"temporal_max_pool",
                   [=](auto& r) {
                     // Distinct, well separated values so the argmax is stable under perturbation.
                     auto [t, d] = dims(r);
                     Tensor x(Shape{t * 2, d});
                     std::vector<double> vals(x.size());
                     for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.1 * static_cast<double>(i);
                     std::shuffle(vals.begin(), vals.end(), r);
                     std::copy(vals.begin(), vals.end(), x.data().begin());
                     return std::vector<Tensor>{x};
                   },
                   [](Graph&, auto& v) {
                     const std::size_t steps = v[0].value().rows() / 2;
                     std::vector<std::size_t> lengths{steps, std::max<std::size_t>(1, steps - 1)};
                     return temporal_max_pool(v[0], 2, lengths);
                   }});
  cases.push_back({"mean",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m, n}, r)};
                   },
                   [](Graph&, auto& v) { return mean(v[0]); }});
  cases.push_back({"sum",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m, n}, r)};
                   },
                   [](Graph&, auto& v) { return sum(v[0]); }});
  cases.push_back({"cross_entropy",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m + 1, n + 1}, r, -2, 2)};
                   },
                   [](Graph&, auto& v) {
                     const std::size_t rows = v[0].value().rows(), cols = v[0].value().cols();
                     std::vector<int> targets(rows);
                     for (std::size_t i = 0; i < rows; ++i) targets[i] = static_cast<int>((i * 7 + 1) % cols);
                     targets[0] = -1;  // ignored row
                     return cross_entropy(v[0], targets, -1);
                   }});
  cases.push_back({"mse",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m, n}, r), random_tensor(Shape{m, n}, r)};
                   },
                   [](Graph&, auto& v) { return mse(v[0], v[1]); }});
  cases.push_back({"cosine_loss",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{away_from_zero(Shape{m, n + 1}, r), away_from_zero(Shape{m, n + 1}, r)};
                   },
                   [](Graph&, auto& v) { return cosine_loss(v[0], v[1]); }});
  cases.push_back({"gru_cell",
                   [=](auto& r) {
                     auto [b, h] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{b, 3 * h}, r, -2, 2),
                                                random_tensor(Shape{b, 3 * h}, r, -2, 2),
                                                random_tensor(Shape{b, h}, r)};
                   },
                   [](Graph&, auto& v) { return gru_cell(v[0], v[1], v[2]); }});
  cases.push_back({"reshape",
                   [=](auto& r) {
                     auto [m, n] = dims(r);
                     return std::vector<Tensor>{random_tensor(Shape{m, n}, r)};
                   },
                   [](Graph&, auto& v) {
                     const std::size_t total = v[0].value().size();
                     return reshape(v[0], Shape{total});
                   }});
  return cases;
}

}  // namespace embedpipe::testing
