#include <cmath>
#include <limits>
#include <random>

#include "embedpipe/corpora.hpp"
#include "embedpipe/util.hpp"

namespace embedpipe {

namespace {

double dist2(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::size_t nearest(const Tensor& centroids, const double* x) {
  const std::size_t d = centroids.cols();
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double dd = dist2(centroids.data().data() + c * d, x, d);
    if (dd < best_d) {
      best_d = dd;
      best = c;
    }
  }
  return best;
}

}  // namespace

UnitCodebook::UnitCodebook(Tensor centroids) : centroids_(std::move(centroids)) {
  if (centroids_.shape().rank() != 2 || centroids_.rows() == 0) {
    throw ShapeError("UnitCodebook", {centroids_.shape()}, "expected non-empty [K, F] centroids");
  }
}

namespace {

struct KMeansRun {
  Tensor centroids;
  double inertia = 0.0;
};

KMeansRun kmeans_once(const Tensor& frames, std::size_t k, std::size_t iterations, Rng& rng) {
  const std::size_t n = frames.rows(), d = frames.cols();
  const double* x = frames.data().data();

  // Greedy k-means++ seeding: each step samples a few D^2-weighted
  // candidates and keeps the one that lowers the potential most.
  Tensor c(Shape{k, d});
  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
  std::vector<double> closest(n, std::numeric_limits<double>::infinity()), trial(n), best_trial(n);
  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t i = 0; i < n; ++i) closest[i] = dist2(x + i * d, x + pick * d, d);
  std::copy(x + pick * d, x + (pick + 1) * d, c.data().begin());
  for (std::size_t j = 1; j < k; ++j) {
    double total = 0.0;
    for (double v : closest) total += v;
    double best_pot = std::numeric_limits<double>::infinity();
    std::size_t best = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      std::size_t cand = n - 1;
      if (total > 0.0) {
        double r = std::uniform_real_distribution<double>(0.0, total)(rng);
        for (std::size_t i = 0; i < n; ++i) {
          r -= closest[i];
          if (r < 0.0) {
            cand = i;
            break;
          }
        }
      } else {
        cand = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      }
      double pot = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        trial[i] = std::min(closest[i], dist2(x + i * d, x + cand * d, d));
        pot += trial[i];
      }
      if (pot < best_pot) {
        best_pot = pot;
        best = cand;
        best_trial.swap(trial);
      }
    }
    closest.swap(best_trial);
    std::copy(x + best * d, x + (best + 1) * d, c.data().begin() + static_cast<std::ptrdiff_t>(j * d));
  }

  std::vector<std::size_t> assign(n);
  std::vector<double> sums(k * d);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < iterations; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = nearest(c, x + i * d);
      changed = changed || a != assign[i];
      assign[i] = a;
    }
    if (!changed) break;
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      counts[assign[i]]++;
      for (std::size_t j = 0; j < d; ++j) sums[assign[i] * d + j] += x[i * d + j];
    }
    for (std::size_t cl = 0; cl < k; ++cl) {
      if (counts[cl] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t j = 0; j < d; ++j) c.at(cl, j) = sums[cl * d + j] / static_cast<double>(counts[cl]);
    }
  }
  double inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) inertia += dist2(x + i * d, c.data().data() + nearest(c, x + i * d) * d, d);
  return {std::move(c), inertia};
}

}  // namespace

UnitCodebook UnitCodebook::fit(const Tensor& frames, std::size_t k, std::size_t iterations, std::uint64_t seed,
                               std::size_t restarts) {
  if (frames.shape().rank() != 2) throw ShapeError("UnitCodebook::fit", {frames.shape()});
  if (k == 0 || frames.rows() < k) throw std::invalid_argument("UnitCodebook::fit: need at least k frames");
  KMeansRun best;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, restarts); ++r) {
    Rng rng = make_rng(seed, r);
    KMeansRun run = kmeans_once(frames, k, iterations, rng);
    if (r == 0 || run.inertia < best.inertia) best = std::move(run);
  }
  return UnitCodebook(std::move(best.centroids));
}

int UnitCodebook::assign(std::span<const double> frame) const {
  if (frame.size() != dim()) throw ShapeError("UnitCodebook::assign", {Shape{frame.size()}, Shape{dim()}});
  return static_cast<int>(nearest(centroids_, frame.data()));
}

nlohmann::json UnitCodebook::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < size(); ++r) {
    auto row = centroids_.data().subspan(r * dim(), dim());
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return {{"k", size()}, {"dim", dim()}, {"centroids", rows}};
}

UnitCodebook UnitCodebook::from_json(const nlohmann::json& j) {
  const auto k = j.at("k").get<std::size_t>(), d = j.at("dim").get<std::size_t>();
  const auto& rows = j.at("centroids");
  if (rows.size() != k) throw std::invalid_argument("codebook: centroid count does not match k");
  std::vector<double> data;
  data.reserve(k * d);
  for (const auto& r : rows) {
    if (r.size() != d) throw std::invalid_argument("codebook: centroid width does not match dim");
    for (const auto& v : r) data.push_back(v.get<double>());
  }
  return UnitCodebook(Tensor(Shape{k, d}, std::move(data)));
}

std::vector<int> extract_units(const Tensor& frames, const UnitCodebook& codebook) {
  if (frames.shape().rank() != 2 || frames.cols() != codebook.dim()) {
    throw ShapeError("extract_units", {frames.shape(), codebook.centroids().shape()});
  }
  std::vector<int> out(frames.rows());
  for (std::size_t t = 0; t < frames.rows(); ++t) out[t] = codebook.assign(frames.data().subspan(t * frames.cols(), frames.cols()));
  return out;
}

std::vector<int> normalize_units(std::span<const int> units) {
  std::vector<int> out;
  for (int u : units) {
    if (out.empty() || out.back() != u) out.push_back(u);
  }
  return out;
}

bool is_normalized(std::span<const int> units) {
  for (std::size_t i = 1; i < units.size(); ++i) {
    if (units[i] == units[i - 1]) return false;
  }
  return true;
}

}  // namespace embedpipe
