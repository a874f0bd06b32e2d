#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "embedpipe/graph.hpp"
#include "embedpipe/util.hpp"

namespace embedpipe {

/// Ordered, named parameter tensors of one module.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  Tensor& add(std::string name, Shape shape);
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  bool has(std::string_view name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor*> tensors();
  /// Total scalar count.
  std::size_t count() const;

  /// Marks every tensor trainable or frozen.
  void set_trainable(bool on);
  bool trainable() const;

  /// FNV-1a over names, shapes and the raw float64 bytes. Used by freezing checks.
  std::uint64_t fingerprint() const;
  /// Rounds every value to the nearest float32, matching the checkpoint encoding.
  void round_to_float32();

  /// Binds `t` into `g`: as a gradient sink when `track` and t requires grad,
  /// otherwise as a read-only leaf.
  static Var bind(Graph& g, const Tensor& t, bool track);

 private:
  std::vector<Entry> entries_;
};

/// Uniform(-limit, limit) fill.
void fill_uniform(Tensor& t, Rng& rng, double limit);
void fill_normal(Tensor& t, Rng& rng, double stddev);

}  // namespace embedpipe
