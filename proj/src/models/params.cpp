#include "embedpipe/params.hpp"

#include <cstring>
#include <random>
#include <stdexcept>

namespace embedpipe {

Tensor& ParameterStore::add(std::string name, Shape shape) {
  if (has(name)) throw std::invalid_argument("parameter '" + name + "' already exists");
  entries_.push_back({std::move(name), Tensor(shape)});
  return entries_.back().tensor;
}

Tensor& ParameterStore::get(std::string_view name) {
  for (Entry& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

const Tensor& ParameterStore::get(std::string_view name) const {
  return const_cast<ParameterStore*>(this)->get(name);
}

bool ParameterStore::has(std::string_view name) const {
  for (const Entry& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

std::vector<Tensor*> ParameterStore::tensors() {
  std::vector<Tensor*> out;
  out.reserve(entries_.size());
  for (Entry& e : entries_) out.push_back(&e.tensor);
  return out;
}

std::size_t ParameterStore::count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) n += e.tensor.size();
  return n;
}

void ParameterStore::set_trainable(bool on) {
  for (Entry& e : entries_) {
    e.tensor.set_requires_grad(on);
    if (!on) e.tensor.drop_grad();
  }
}

bool ParameterStore::trainable() const {
  for (const Entry& e : entries_) {
    if (!e.tensor.requires_grad()) return false;
  }
  return !entries_.empty();
}

std::uint64_t ParameterStore::fingerprint() const {
  Fnv1a h;
  for (const Entry& e : entries_) {
    h.update(e.name);
    h.update(e.tensor.shape().str());
    auto bytes = std::as_bytes(e.tensor.data());
    h.update(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
  }
  return h.value();
}

void ParameterStore::round_to_float32() {
  for (Entry& e : entries_) {
    for (double& v : e.tensor.data()) v = static_cast<double>(static_cast<float>(v));
  }
}

Var ParameterStore::bind(Graph& g, const Tensor& t, bool track) {
  if (track && t.requires_grad()) return g.parameter(const_cast<Tensor&>(t));
  return g.frozen(t);
}

void fill_uniform(Tensor& t, Rng& rng, double limit) {
  std::uniform_real_distribution<double> u(-limit, limit);
  for (double& v : t.data()) v = u(rng);
}

void fill_normal(Tensor& t, Rng& rng, double stddev) {
  std::normal_distribution<double> n(0.0, stddev);
  for (double& v : t.data()) v = n(rng);
}

}  // namespace embedpipe
