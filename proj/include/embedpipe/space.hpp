#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "embedpipe/tensor.hpp"
#include "json.hpp"

namespace embedpipe {

/// A pooled encoder output together with where it came from.
struct SentenceEmbedding {
  std::vector<double> values;
  std::string encoder_id;
  std::uint64_t input_hash = 0;
};

/// Mean over dimensions of (a_i - b_i)^2. D * mse_loss is the squared L2 distance.
double mse_loss(std::span<const double> a, std::span<const double> b);
/// 1 - cos(a, b); both vectors must be nonzero.
double cosine_loss(std::span<const double> a, std::span<const double> b);
double squared_l2(std::span<const double> a, std::span<const double> b);

/// How epsilon in x * (1 + epsilon) is drawn.
///  per_dim_std: epsilon_i ~ N(0, alpha^2) independently per dimension
///  per_dim_var: epsilon_i ~ N(0, alpha)   (alpha read as the variance)
///  scalar_std:  one epsilon ~ N(0, alpha^2) shared by all dimensions
enum class NoiseMode { kPerDimStd, kPerDimVar, kScalarStd };
std::string_view to_string(NoiseMode m);
NoiseMode parse_noise_mode(std::string_view s);

struct NoiseSpec {
  double alpha = 0.25;
  NoiseMode mode = NoiseMode::kPerDimStd;
  std::uint64_t seed = 0;
};

/// x * (1 + epsilon) with epsilon drawn from the stream (spec.seed, stream).
/// alpha == 0 returns x unchanged.
std::vector<double> perturb(std::span<const double> x, const NoiseSpec& spec, std::uint64_t stream);
/// Perturbs each row r of `rows` [B, D] in place using stream first_stream + r.
void perturb_rows(Tensor& rows, const NoiseSpec& spec, std::uint64_t first_stream);
/// Closed-form E ||perturb(x) - x||^2.
double expected_distortion(std::span<const double> x, double alpha, NoiseMode mode = NoiseMode::kPerDimStd);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
};

struct DistanceStats {
  double mean_l2sq = 0.0;
  double p10 = 0.0;
  double p50 = 0.0;
  double p90 = 0.0;
  std::vector<HistogramBin> histogram;
};

/// Linear-interpolated percentile (q in [0, 100]) of unsorted values.
double percentile(std::vector<double> values, double q);
/// Summary of squared distances; the histogram spans [min, max] in `bins` equal bins.
DistanceStats distance_stats(std::span<const double> l2sq, std::size_t bins = 10);
/// Row-wise squared L2 distance between aligned [N, D] embedding matrices.
std::vector<double> rowwise_l2sq(const Tensor& a, const Tensor& b);

/// {language: {mean_l2sq, p10, p50, p90, histogram: [[lo, hi, count], ...]}}
nlohmann::json distance_report_json(const std::map<std::string, DistanceStats>& per_language);

}  // namespace embedpipe
