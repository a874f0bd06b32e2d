#include "embedpipe/space.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "embedpipe/util.hpp"

namespace embedpipe {

namespace {

void same_width(std::string_view op, std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError(std::string(op), {Shape{a.size()}, Shape{b.size()}});
  if (a.empty()) throw ShapeError(std::string(op), {}, "empty vectors");
}

}  // namespace

double squared_l2(std::span<const double> a, std::span<const double> b) {
  same_width("squared_l2", a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double mse_loss(std::span<const double> a, std::span<const double> b) {
  same_width("mse_loss", a, b);
  return squared_l2(a, b) / static_cast<double>(a.size());
}

double cosine_loss(std::span<const double> a, std::span<const double> b) {
  same_width("cosine_loss", a, b);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw TensorError("cosine_loss: zero vector");
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

std::string_view to_string(NoiseMode m) {
  switch (m) {
    case NoiseMode::kPerDimStd: return "per_dim_std";
    case NoiseMode::kPerDimVar: return "per_dim_var";
    case NoiseMode::kScalarStd: return "scalar_std";
  }
  return "per_dim_std";
}

NoiseMode parse_noise_mode(std::string_view s) {
  if (s == "per_dim_std") return NoiseMode::kPerDimStd;
  if (s == "per_dim_var") return NoiseMode::kPerDimVar;
  if (s == "scalar_std") return NoiseMode::kScalarStd;
  throw std::invalid_argument("unknown noise mode '" + std::string(s) + "'");
}

std::vector<double> perturb(std::span<const double> x, const NoiseSpec& spec, std::uint64_t stream) {
  std::vector<double> out(x.begin(), x.end());
  if (spec.alpha < 0.0) throw std::invalid_argument("perturb: alpha must be non-negative");
  if (spec.alpha == 0.0) return out;
  SplitMix64 rng(derive_seed(spec.seed, stream));
  const double stddev = spec.mode == NoiseMode::kPerDimVar ? std::sqrt(spec.alpha) : spec.alpha;
  std::normal_distribution<double> eps(0.0, stddev);
  if (spec.mode == NoiseMode::kScalarStd) {
    const double e = eps(rng);
    for (double& v : out) v *= 1.0 + e;
  } else {
    for (double& v : out) v *= 1.0 + eps(rng);
  }
  return out;
}

void perturb_rows(Tensor& rows, const NoiseSpec& spec, std::uint64_t first_stream) {
  if (spec.alpha == 0.0) return;
  const std::size_t d = rows.cols();
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    auto span = rows.data().subspan(r * d, d);
    std::vector<double> p = perturb(span, spec, first_stream + r);
    std::copy(p.begin(), p.end(), span.begin());
  }
}

double expected_distortion(std::span<const double> x, double alpha, NoiseMode mode) {
  double norm2 = 0.0;
  for (double v : x) norm2 += v * v;
  const double variance = mode == NoiseMode::kPerDimVar ? alpha : alpha * alpha;
  return variance * norm2;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

DistanceStats distance_stats(std::span<const double> l2sq, std::size_t bins) {
  if (l2sq.empty()) throw std::invalid_argument("distance_stats: no distances");
  if (bins == 0) bins = 1;
  DistanceStats s;
  std::vector<double> v(l2sq.begin(), l2sq.end());
  double total = 0.0;
  for (double d : v) total += d;
  s.mean_l2sq = total / static_cast<double>(v.size());
  s.p10 = percentile(v, 10);
  s.p50 = percentile(v, 50);
  s.p90 = percentile(v, 90);
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  const double lo = *mn, hi = *mx;
  if (hi == lo) {
    s.histogram.push_back({lo, hi, v.size()});
    return s;
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    s.histogram.push_back({lo + width * static_cast<double>(b), b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1), 0});
  }
  for (double d : v) {
    auto b = static_cast<std::size_t>((d - lo) / width);
    s.histogram[std::min(b, bins - 1)].count++;
  }
  return s;
}

std::vector<double> rowwise_l2sq(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape()) || a.shape().rank() != 2) {
    throw ShapeError("rowwise_l2sq", {a.shape(), b.shape()});
  }
  std::vector<double> out(a.rows());
  const std::size_t d = a.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) out[r] = squared_l2(a.data().subspan(r * d, d), b.data().subspan(r * d, d));
  return out;
}

nlohmann::json distance_report_json(const std::map<std::string, DistanceStats>& per_language) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [lang, s] : per_language) {
    nlohmann::json hist = nlohmann::json::array();
    for (const HistogramBin& b : s.histogram) hist.push_back({b.lo, b.hi, b.count});
    j[lang] = {{"mean_l2sq", s.mean_l2sq}, {"p10", s.p10}, {"p50", s.p50}, {"p90", s.p90}, {"histogram", hist}};
  }
  return j;
}

}  // namespace embedpipe
