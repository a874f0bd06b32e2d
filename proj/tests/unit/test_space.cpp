#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "embedpipe/space.hpp"

using namespace embedpipe;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

double mc_distortion(const std::vector<double>& x, NoiseSpec spec, std::size_t draws) {
  double total = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    auto y = perturb(x, spec, i);
    double d = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) d += (y[j] - x[j]) * (y[j] - x[j]);
    total += d;
  }
  return total / static_cast<double>(draws);
}

}  // namespace

TEST_CASE("mse_loss examples and naive oracle") {
  const std::vector<double> z{0, 0}, v{3, 4};
  CHECK(mse_loss(z, z) == 0.0);
  CHECK(mse_loss(z, v) == 12.5);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    auto a = random_vec(rng, 64), b = random_vec(rng, 64);
    double naive = 0.0;
    for (int i = 0; i < 64; ++i) naive += (a[i] - b[i]) * (a[i] - b[i]);
    CHECK(mse_loss(a, b) == doctest::Approx(naive / 64).epsilon(1e-14));
    CHECK(std::abs(64 * mse_loss(a, b) - naive) <= 1e-10);
    CHECK(mse_loss(a, b) == mse_loss(b, a));
    CHECK(mse_loss(a, b) > 0.0);
    CHECK(mse_loss(a, a) == 0.0);
  }
  CHECK_THROWS_AS(mse_loss(z, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST_CASE("cosine_loss examples") {
  const std::vector<double> a{1, 2, 3}, neg{-1, -2, -3}, x{1, 0}, y{0, 5};
  CHECK(cosine_loss(a, a) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cosine_loss(x, y) == 1.0);
  CHECK(cosine_loss(a, neg) == doctest::Approx(2.0));
  CHECK_THROWS(cosine_loss(x, std::vector<double>{0, 0}));
}

TEST_CASE("perturb: identity cases and determinism") {
  std::mt19937_64 rng(2);
  auto x = random_vec(rng, 16);
  NoiseSpec off{0.0, NoiseMode::kPerDimStd, 7};
  CHECK(perturb(x, off, 3) == x);
  std::vector<double> zero(16, 0.0);
  for (NoiseMode m : {NoiseMode::kPerDimStd, NoiseMode::kPerDimVar, NoiseMode::kScalarStd}) {
    NoiseSpec spec{0.5, m, 7};
    CHECK(perturb(zero, spec, 11) == zero);
    CHECK(perturb(x, spec, 11) == perturb(x, spec, 11));
    CHECK(perturb(x, spec, 11) != perturb(x, spec, 12));
  }
  NoiseSpec scalar{0.3, NoiseMode::kScalarStd, 1};
  auto y = perturb(x, scalar, 0);
  const double ratio = y[0] / x[0];
  for (std::size_t i = 1; i < x.size(); ++i) CHECK(y[i] / x[i] == doctest::Approx(ratio).epsilon(1e-12));
}

TEST_CASE("expected distortion closed form") {
  const std::vector<double> ones{1, 1};
  CHECK(expected_distortion(ones, 0.0) == 0.0);
  CHECK(expected_distortion(ones, 0.25) == 0.125);
  CHECK(expected_distortion(ones, 0.0625, NoiseMode::kPerDimVar) == 0.125);
}

TEST_CASE("Monte-Carlo distortion of [1,1] at alpha 0.25 is 0.125 within 1%") {
  const std::vector<double> ones{1, 1};
  const double mc = mc_distortion(ones, {0.25, NoiseMode::kPerDimStd, 99}, 1'000'000);
  CHECK(std::abs(mc - 0.125) <= 0.01 * 0.125);
  const double mc_var = mc_distortion(ones, {0.0625, NoiseMode::kPerDimVar, 98}, 200'000);
  CHECK(std::abs(mc_var - 0.125) <= 0.02 * 0.125);
  const double mc_scalar = mc_distortion(ones, {0.25, NoiseMode::kScalarStd, 97}, 200'000);
  CHECK(std::abs(mc_scalar - 0.125) <= 0.02 * 0.125);
}

TEST_CASE("perturb_rows uses one stream per row") {
  std::mt19937_64 rng(3);
  auto a = random_vec(rng, 4), b = random_vec(rng, 4);
  Tensor rows(Shape{2, 4});
  std::copy(a.begin(), a.end(), rows.data().begin());
  std::copy(b.begin(), b.end(), rows.data().begin() + 4);
  NoiseSpec spec{0.25, NoiseMode::kPerDimStd, 5};
  perturb_rows(rows, spec, 40);
  auto pa = perturb(a, spec, 40), pb = perturb(b, spec, 41);
  for (int i = 0; i < 4; ++i) {
    CHECK(rows.at(0, i) == pa[i]);
    CHECK(rows.at(1, i) == pb[i]);
  }
}

TEST_CASE("percentiles interpolate linearly") {
  std::vector<double> v{10, 9, 8, 7, 6, 5, 4, 3, 2, 1};
  CHECK(percentile(v, 10) == doctest::Approx(1.9));
  CHECK(percentile(v, 50) == doctest::Approx(5.5));
  CHECK(percentile(v, 90) == doctest::Approx(9.1));
  CHECK(percentile(v, 0) == 1.0);
  CHECK(percentile(v, 100) == 10.0);
}

TEST_CASE("distance stats and report") {
  std::vector<double> zeros(20, 0.0);
  DistanceStats s0 = distance_stats(zeros);
  CHECK(s0.mean_l2sq == 0.0);
  REQUIRE(s0.histogram.size() == 1);
  CHECK(s0.histogram[0].count == 20);

  std::mt19937_64 rng(4);
  std::vector<double> d;
  for (int i = 0; i < 500; ++i) d.push_back(std::abs(random_vec(rng, 1)[0]));
  DistanceStats s = distance_stats(d, 8);
  std::size_t total = 0;
  for (const auto& b : s.histogram) total += b.count;
  CHECK(total == d.size());
  CHECK(s.p10 <= s.p50);
  CHECK(s.p50 <= s.p90);

  Tensor a(Shape{3, 2}, std::vector<double>{0, 0, 1, 1, 2, 2});
  Tensor b(Shape{3, 2}, std::vector<double>{0, 0, 1, 2, 4, 2});
  CHECK(rowwise_l2sq(a, b) == std::vector<double>{0, 1, 4});

  nlohmann::json j = distance_report_json({{"L0", s0}, {"L1", s}});
  CHECK(j.size() == 2);
  CHECK(j["L1"]["histogram"].size() == 8);
  CHECK(j["L0"]["mean_l2sq"] == 0.0);
}
