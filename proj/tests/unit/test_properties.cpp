#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "oracles.hpp"
#include "stackpred/cluster_loo.hpp"
#include "stackpred/fourier_stack.hpp"
#include "stackpred/rng.hpp"
#include "stackpred/weighting.hpp"

using namespace stackpred;

namespace {

constexpr int kCases = 200;

struct Shape {
  std::size_t n;
  std::size_t k;
};

Shape random_shape(CounterRng& rng, std::size_t n_max = 60, std::size_t k_max = 5) {
  return {10 + rng.below(n_max - 9), 2 + rng.below(k_max - 1)};
}

void check_simplex(const SimplexWeights& w) {
  double sum = 0.0;
  for (double v : w.values()) {
    REQUIRE(v >= 0.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

std::vector<std::size_t> random_permutation(CounterRng& rng, std::size_t k) {
  std::vector<std::size_t> p(k);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = k - 1; i > 0; --i) std::swap(p[i], p[rng.below(i + 1)]);
  return p;
}

Eigen::MatrixXd permute_columns(const Eigen::MatrixXd& m, const std::vector<std::size_t>& p) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t c = 0; c < p.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = m.col(static_cast<Eigen::Index>(p[c]));
  return out;
}

double max_diff_permuted(const SimplexWeights& original, const SimplexWeights& permuted,
                         const std::vector<std::size_t>& p) {
  double d = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) d = std::max(d, std::abs(permuted[c] - original[p[c]]));
  return d;
}

}  // namespace

TEST_CASE("every method returns a point on the simplex") {
  CounterRng rng(101);
  for (int c = 0; c < kCases; ++c) {
    const auto [n, k] = random_shape(rng);
    const LogPredictiveMatrix lpd(oracle::random_lpd(rng, n, k));
    check_simplex(stacking_weights(lpd).weights);
    check_simplex(pseudo_bma_weights(lpd).weights);
    check_simplex(pseudo_bma_bb_weights(lpd, {.replicates = 40, .seed = static_cast<std::uint64_t>(c)}).weights);
    std::vector<double> log_ml(k);
    for (double& v : log_ml) v = rng.uniform() < 0.2 ? -std::numeric_limits<double>::infinity() : rng.normal(-50, 20);
    if (std::all_of(log_ml.begin(), log_ml.end(), [](double v) { return std::isinf(v); })) log_ml[0] = 0.0;
    check_simplex(bma_weights(log_ml).weights);
  }
}

TEST_CASE("stacking ignores per-observation shifts") {
  CounterRng rng(102);
  double worst = 0.0;
  for (int c = 0; c < kCases; ++c) {
    const auto [n, k] = random_shape(rng, 80, 4);
    const Eigen::MatrixXd base = oracle::random_lpd(rng, n, k);
    Eigen::MatrixXd shifted = base;
    for (Eigen::Index i = 0; i < shifted.rows(); ++i) shifted.row(i).array() += rng.normal(0.0, 10.0);
    const auto a = stacking_weights(LogPredictiveMatrix(base)).weights;
    const auto b = stacking_weights(LogPredictiveMatrix(shifted)).weights;
    for (std::size_t m = 0; m < k; ++m) worst = std::max(worst, std::abs(a[m] - b[m]));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("weights follow a permutation of the models") {
  CounterRng rng(103);
  double stacking = 0.0;
  double pbma = 0.0;
  double bb = 0.0;
  double bma = 0.0;
  for (int c = 0; c < kCases; ++c) {
    const auto [n, k] = random_shape(rng, 50, 4);
    const Eigen::MatrixXd base = oracle::random_lpd(rng, n, k);
    const auto p = random_permutation(rng, k);
    const LogPredictiveMatrix a(base);
    const LogPredictiveMatrix b(permute_columns(base, p));
    stacking = std::max(stacking, max_diff_permuted(stacking_weights(a).weights, stacking_weights(b).weights, p));
    pbma = std::max(pbma, max_diff_permuted(pseudo_bma_weights(a).weights, pseudo_bma_weights(b).weights, p));
    const BayesianBootstrapOptions opts{.replicates = 40, .seed = static_cast<std::uint64_t>(c)};
    bb = std::max(bb, max_diff_permuted(pseudo_bma_bb_weights(a, opts).weights, pseudo_bma_bb_weights(b, opts).weights, p));
    std::vector<double> log_ml(k);
    for (double& v : log_ml) v = rng.normal(-20, 3);
    std::vector<double> log_ml_p(k);
    for (std::size_t m = 0; m < k; ++m) log_ml_p[m] = log_ml[p[m]];
    bma = std::max(bma, max_diff_permuted(bma_weights(log_ml).weights, bma_weights(log_ml_p).weights, p));
  }
  CHECK(stacking < 1e-6);
  CHECK(pbma < 1e-12);
  CHECK(bb < 1e-12);
  CHECK(bma < 1e-12);
}

TEST_CASE("softmax is shift invariant and matches an extended precision oracle") {
  CounterRng rng(104);
  for (int c = 0; c < kCases; ++c) {
    const std::size_t k = 1 + rng.below(8);
    std::vector<double> x(k);
    for (double& v : x) v = rng.normal(0.0, 30.0);
    const double shift = rng.normal(0.0, 500.0);
    std::vector<double> y(x);
    for (double& v : y) v += shift;
    const auto a = softmax(x);
    const auto b = softmax(y);
    const auto ref = oracle::softmax(std::vector<long double>(x.begin(), x.end()));
    for (std::size_t m = 0; m < k; ++m) {
      CHECK(std::abs(a[m] - b[m]) < 1e-12);
      CHECK(std::abs(a[m] - static_cast<double>(ref[m])) < 1e-14);
    }
  }
}

TEST_CASE("full neighborhoods equal exact LOO on random data") {
  CounterRng rng(105);
  for (int c = 0; c < kCases; ++c) {
    const std::size_t n = 2 + rng.below(20);
    std::vector<double> y(n);
    const double centre = rng.normal(0.0, 5.0);
    for (double& v : y) v = rng.normal(centre, 1.0 + rng.uniform());
    const cluster::ConjugateGaussianModel model{rng.normal(), 0.1 + rng.exponential(), 0.1 + rng.exponential()};
    const cluster::ConjugateGaussianAdapter adapter(model);
    const std::vector<const cluster::ModelAdapter*> adapters{&adapter};
    const auto lpd = cluster::cluster_loo_matrix(adapters, y, cluster::NeighborhoodStructure::full(n));
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> others;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) others.push_back(j);
      }
      REQUIRE(lpd(i, 0) == cluster::conjugate_predictive(model, i, others, y));
    }
  }
}

TEST_CASE("Fourier objective gradient is stable and matches the Gaussian closed form") {
  constexpr double x0 = -30.0;
  constexpr std::size_t n = 4096;
  constexpr double dx = 60.0 / static_cast<double>(n);
  const std::vector<double> means{-1.0, 0.5, 2.0};
  CounterRng rng(106);
  std::vector<double> heldout(100);
  for (double& v : heldout) v = rng.normal(0.3, 1.2);

  // Unequal variances truncate the common band, so the closed form only applies to the equal case.
  for (const std::vector<double>& vars : {std::vector<double>{1.0, 0.5, 2.0}, std::vector<double>{1.0, 1.0, 1.0}}) {
    const bool closed_form = vars[1] == vars[0] && vars[2] == vars[0];
    std::vector<fourier::GridDensity> components;
    for (std::size_t k = 0; k < means.size(); ++k) {
      components.push_back(fourier::GridDensity::sample(x0, dx, n, [&, k](double x) {
        return static_cast<double>(oracle::normal_pdf(x, means[k], vars[k]));
      }));
    }
    const fourier::FourierFitProblem problem(components, heldout);

    for (int c = 0; c < 5; ++c) {
      std::vector<double> w(3);
      for (double& v : w) v = 0.05 + rng.exponential();
      const double total = std::accumulate(w.begin(), w.end(), 0.0);
      for (double& v : w) v /= total;

      const auto fine = problem.gradient(w, 1e-6);
      const auto coarse = problem.gradient(w, 1e-4);
      double mean = 0.0;
      double var = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        mean += w[k] * means[k];
        var += w[k] * vars[k];
      }
      for (std::size_t k = 0; k < 3; ++k) {
        CHECK(std::abs(fine[k] - coarse[k]) / std::max(1.0, std::abs(fine[k])) < 1e-4);
        if (!closed_form) continue;
        long double analytic = 0.0L;
        for (double y : heldout) {
          const long double d = y - mean;
          analytic += means[k] * d / var + 0.5L * vars[k] * (d * d / (var * var) - 1.0L / var);
        }
        const double a = static_cast<double>(analytic);
        CHECK(std::abs(fine[k] - a) / std::max(1.0, std::abs(a)) < 1e-3);
      }
    }
  }
}
