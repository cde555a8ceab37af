#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "oracles.hpp"
#include "stackpred/error.hpp"
#include "stackpred/psis_loo.hpp"
#include "stackpred/rng.hpp"

using namespace stackpred;
using namespace stackpred::psis;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

struct ConjugateCube {
  std::vector<double> data;
  DrawLogLikCube cube;
  std::vector<double> exact_loo;
};

ConjugateCube conjugate_cube(std::size_t n, std::size_t draws, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<double> y(n);
  for (double& v : y) v = rng.normal(0.5, 1.0);
  // mu ~ N(0, 1), y ~ N(mu, 1)
  const double sum = std::accumulate(y.begin(), y.end(), 0.0);
  const double post_var = 1.0 / (1.0 + static_cast<double>(n));
  const double post_mean = post_var * sum;
  std::vector<double> values(draws * n);
  CounterRng draw_rng = rng.substream(1);
  for (std::size_t s = 0; s < draws; ++s) {
    const double mu = draw_rng.normal(post_mean, std::sqrt(post_var));
    for (std::size_t i = 0; i < n; ++i) values[s * n + i] = static_cast<double>(oracle::normal_logpdf(y[i], mu, 1.0));
  }
  std::vector<double> exact(n);
  for (std::size_t i = 0; i < n; ++i) {
    const long double v = 1.0L / (1.0L + static_cast<long double>(n - 1));
    const long double m = v * (static_cast<long double>(sum) - y[i]);
    exact[i] = static_cast<double>(oracle::normal_logpdf(y[i], m, v + 1.0L));
  }
  return {y, DrawLogLikCube(draws, n, 1, std::move(values)), exact};
}

}  // namespace

TEST_CASE("GPD fit recovers the shape of exponential exceedances") {
  CounterRng rng(11);
  std::vector<double> sample(10000);
  for (double& v : sample) v = rng.exponential();
  const ParetoFit fit = fit_generalized_pareto(sample);
  CHECK(std::abs(fit.khat) < 0.1);
  CHECK(fit.sigma > 0.0);
  CHECK(fit.tail_size == sample.size());
}

TEST_CASE("GPD fit recovers shape -1 for uniform draws") {
  CounterRng rng(12);
  std::vector<double> sample(10000);
  for (double& v : sample) v = rng.uniform();
  const ParetoFit fit = fit_generalized_pareto(sample);
  CHECK(std::abs(fit.khat + 1.0) < 0.1);
}

TEST_CASE("GPD fit rejects bad samples") {
  const std::vector<double> constant(5, 1.0);
  CHECK(code_of([&] { fit_generalized_pareto(constant); }) == ErrorCode::DegenerateSample);
  const std::vector<double> short_sample{1.0, 2.0, 3.0, 4.0};
  CHECK(code_of([&] { fit_generalized_pareto(short_sample); }) == ErrorCode::TooFewTailSamples);
  const std::vector<double> with_zero{0.0, 1.0, 2.0, 3.0, 4.0};
  CHECK(code_of([&] { fit_generalized_pareto(with_zero); }) == ErrorCode::InvalidInput);
  GpdFitOptions opts;
  opts.min_size = 10;
  const std::vector<double> seven{1, 2, 3, 4, 5, 6, 7};
  CHECK(code_of([&] { fit_generalized_pareto(seven, opts); }) == ErrorCode::TooFewTailSamples);
}

TEST_CASE("GPD fit is deterministic") {
  CounterRng rng(3);
  std::vector<double> sample(500);
  for (double& v : sample) v = rng.exponential() * 2.0;
  const ParetoFit a = fit_generalized_pareto(sample);
  std::reverse(sample.begin(), sample.end());
  const ParetoFit b = fit_generalized_pareto(sample);
  CHECK(a.khat == b.khat);
  CHECK(a.sigma == b.sigma);
}

TEST_CASE("GPD quantile matches closed forms") {
  for (double p : {0.1, 0.5, 0.9, 0.999}) {
    CHECK(gpd_quantile(p, 0.0, 2.0) == doctest::Approx(-2.0 * std::log(1.0 - p)).epsilon(1e-14));
    CHECK(gpd_quantile(p, 0.5, 1.5) == doctest::Approx(1.5 * (std::pow(1.0 - p, -0.5) - 1.0) / 0.5).epsilon(1e-13));
    CHECK(gpd_quantile(p, -1.0, 1.0) == doctest::Approx(p).epsilon(1e-13));
  }
}

TEST_CASE("tail length follows the min(S/5, 3 sqrt S) rule") {
  CHECK(tail_length(4000) == 190);
  CHECK(tail_length(100) == 20);
  CHECK(tail_length(1000) == 95);
  CHECK(tail_length(16) == kMinTailSize);
  CHECK(tail_length(30) == 6);
}

TEST_CASE("constant ratios come back unchanged with the sentinel") {
  const std::vector<double> ratios(64, 3.7);
  const auto out = psis_smooth(ratios);
  CHECK(out.log_weights == ratios);
  CHECK(out.khat == kKhatSentinel);
  CHECK(out.degenerate);
}

TEST_CASE("psis_smooth rejects short or non-finite input") {
  const std::vector<double> short_input(15, 0.0);
  CHECK(code_of([&] { psis_smooth(short_input); }) == ErrorCode::InvalidInput);
  std::vector<double> bad(32, 0.0);
  bad[7] = NAN;
  CHECK(code_of([&] { psis_smooth(bad); }) == ErrorCode::InvalidInput);
}

TEST_CASE("smoothing touches only the tail, caps at the raw max and keeps ranks") {
  CounterRng rng(5);
  std::vector<double> ratios(4000);
  for (double& v : ratios) v = rng.normal();
  const auto out = psis_smooth(ratios);
  CHECK(out.khat < kKhatWarning);
  CHECK_FALSE(out.degenerate);
  CHECK(out.tail_size == 190);

  std::vector<std::size_t> order(ratios.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return ratios[a] < ratios[b]; });
  const double raw_max = ratios[order.back()];
  for (std::size_t r = 0; r + out.tail_size < order.size(); ++r) {
    CHECK(out.log_weights[order[r]] == ratios[order[r]]);
  }
  for (std::size_t r = 0; r + 1 < order.size(); ++r) {
    CHECK(out.log_weights[order[r]] <= out.log_weights[order[r + 1]]);
  }
  CHECK(*std::max_element(out.log_weights.begin(), out.log_weights.end()) <= raw_max);
}

TEST_CASE("shifting the ratios shifts the smoothed weights") {
  CounterRng rng(6);
  std::vector<double> ratios(1000);
  for (double& v : ratios) v = rng.normal(0.0, 2.0);
  std::vector<double> shifted = ratios;
  for (double& v : shifted) v += 12.5;
  const auto a = psis_smooth(ratios);
  const auto b = psis_smooth(shifted);
  CHECK(a.khat == doctest::Approx(b.khat).epsilon(1e-9));
  for (std::size_t s = 0; s < ratios.size(); ++s) {
    CHECK(b.log_weights[s] - a.log_weights[s] == doctest::Approx(12.5).epsilon(1e-12));
  }
}

TEST_CASE("identical draws give the common value exactly") {
  const std::size_t draws = 20;
  const std::vector<double> c{-0.25, -3.5, 1.75};
  std::vector<double> values;
  for (std::size_t s = 0; s < draws; ++s) values.insert(values.end(), c.begin(), c.end());
  const auto loo = psis_loo_matrix(DrawLogLikCube(draws, 3, 1, values));
  for (Eigen::Index i = 0; i < 3; ++i) {
    CHECK(loo.lpd(i, 0) == c[static_cast<std::size_t>(i)]);
    CHECK(loo.degenerate(i, 0));
    CHECK(loo.khat(i, 0) == kKhatSentinel);
    CHECK_FALSE(loo.high_khat(i, 0));
  }
}

TEST_CASE("cube validation") {
  std::vector<double> values(16 * 2, -1.0);
  values[5] = INFINITY;
  CHECK(code_of([&] { DrawLogLikCube(16, 2, 1, values); }) == ErrorCode::InvalidInput);
  CHECK(code_of([&] { DrawLogLikCube(15, 2, 1, std::vector<double>(30, 0.0)); }) == ErrorCode::InvalidInput);
  CHECK(code_of([&] { DrawLogLikCube(16, 2, 1, std::vector<double>(31, 0.0)); }) == ErrorCode::InvalidInput);
  CHECK(code_of([&] { DrawLogLikCube(16, 0, 1, {}); }) == ErrorCode::InvalidInput);
}

TEST_CASE("PSIS-LOO tracks the exact conjugate LOO") {
  const auto setup = conjugate_cube(30, 4000, 21);
  const auto loo = psis_loo_matrix(setup.cube);
  double total = 0.0;
  for (std::size_t i = 0; i < setup.data.size(); ++i) {
    total += std::abs(loo.lpd(static_cast<Eigen::Index>(i), 0) - setup.exact_loo[i]);
    CHECK(loo.khat(static_cast<Eigen::Index>(i), 0) < kKhatWarning);
  }
  CHECK(total / static_cast<double>(setup.data.size()) < 0.1);
}

TEST_CASE("PSIS-LOO is shift invariant per cell") {
  const auto setup = conjugate_cube(8, 500, 22);
  std::vector<double> shifted = setup.cube.values();
  for (std::size_t s = 0; s < 500; ++s) shifted[s * 8 + 3] += 4.25;
  const auto a = psis_loo_matrix(setup.cube);
  const auto b = psis_loo_matrix(DrawLogLikCube(500, 8, 1, shifted));
  CHECK(b.lpd(3, 0) - a.lpd(3, 0) == doctest::Approx(4.25).epsilon(1e-12));
  CHECK(b.lpd(2, 0) == a.lpd(2, 0));
}

TEST_CASE("extreme log-likelihoods stay finite") {
  CounterRng rng(8);
  const std::size_t draws = 200;
  const std::size_t n = 6;
  std::vector<double> values(draws * n * 2);
  for (double& v : values) v = -700.0 + 1400.0 * rng.uniform();
  const auto loo = psis_loo_matrix(DrawLogLikCube(draws, n, 2, values));
  CHECK(loo.lpd.allFinite());
}

TEST_CASE("thread count does not change the LOO matrix") {
  const auto setup = conjugate_cube(25, 300, 23);
  const auto a = psis_loo_matrix(setup.cube, 1);
  const auto b = psis_loo_matrix(setup.cube, 4);
  CHECK(a.lpd == b.lpd);
  CHECK(a.khat == b.khat);
}
