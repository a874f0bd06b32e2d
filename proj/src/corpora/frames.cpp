#include <limits>
#include <random>

#include "embedpipe/corpora.hpp"
#include "embedpipe/util.hpp"

namespace embedpipe {

FrameSynthesizer::FrameSynthesizer(FrameConfig config, std::uint64_t prototype_seed)
    : config_(config), prototype_seed_(prototype_seed) {
  if (config_.dim == 0) throw std::invalid_argument("frame dim must be positive");
  if (config_.min_repeat == 0 || config_.min_repeat > config_.max_repeat) {
    throw std::invalid_argument("frame repeats need 1 <= min_repeat <= max_repeat");
  }
  if (config_.sigma < 0.0) throw std::invalid_argument("frame sigma must be non-negative");
}

std::vector<double> FrameSynthesizer::prototype(std::string_view lang, std::string_view token) const {
  SplitMix64 rng(derive_seed(prototype_seed_, fnv1a64(lang), fnv1a64(token)));
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> p(config_.dim);
  for (double& v : p) v = n(rng);
  return p;
}

Tensor FrameSynthesizer::synth(const Sentence& sentence, std::string_view lang, std::uint64_t seed) const {
  if (sentence.empty()) throw std::invalid_argument("cannot synthesise frames for an empty sentence");
  SplitMix64 rng(seed);
  std::uniform_int_distribution<std::size_t> repeat(config_.min_repeat, config_.max_repeat);
  std::normal_distribution<double> jitter(0.0, config_.sigma);
  std::vector<double> data;
  std::size_t rows = 0;
  for (const auto& token : sentence) {
    const std::vector<double> p = prototype(lang, token);
    const std::size_t k = repeat(rng);
    for (std::size_t i = 0; i < k; ++i) {
      for (double v : p) data.push_back(config_.sigma > 0.0 ? v + jitter(rng) : v);
    }
    rows += k;
  }
  return Tensor(Shape{rows, config_.dim}, std::move(data));
}

const std::string& FrameSynthesizer::nearest_token(std::span<const double> frame, std::string_view lang,
                                                   std::span<const std::string> candidates) const {
  if (candidates.empty()) throw std::invalid_argument("nearest_token: no candidates");
  if (frame.size() != config_.dim) throw ShapeError("nearest_token", {Shape{frame.size()}, Shape{config_.dim}});
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const std::vector<double> p = prototype(lang, candidates[c]);
    double d = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) d += (frame[i] - p[i]) * (frame[i] - p[i]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return candidates[best];
}

}  // namespace embedpipe
