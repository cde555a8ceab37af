#include "stackpred/psis_loo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "stackpred/error.hpp"
#include "stackpred/parallel.hpp"

namespace stackpred::psis {

namespace {

// Zhang & Stephens (2009) estimator on an ascending sample. Zeros are allowed
// (tail entries tied with the cutoff); the caller rules out constant samples.
ParetoFit fit_sorted(std::span<const double> x, const GpdFitOptions& opts) {
  const std::size_t n = x.size();
  const double nd = static_cast<double>(n);
  const std::size_t grid = opts.min_grid_points + static_cast<std::size_t>(std::floor(std::sqrt(nd)));
  constexpr double kPrior = 3.0;

  // First-quartile anchor, 1-based index floor(n/4 + 0.5).
  std::size_t q = static_cast<std::size_t>(std::floor(nd / 4.0 + 0.5));
  q = std::clamp<std::size_t>(q, 1, n) - 1;
  while (q + 1 < n && x[q] <= 0.0) ++q;
  const double xstar = x[q];
  const double xmax = x[n - 1];

  std::vector<double> theta(grid);
  std::vector<double> profile(grid);
  for (std::size_t j = 0; j < grid; ++j) {
    const double jj = static_cast<double>(j + 1);
    theta[j] = 1.0 / xmax + (1.0 - std::sqrt(static_cast<double>(grid) / (jj - 0.5))) / kPrior / xstar;
    double mean_log = 0.0;
    for (double xi : x) mean_log += std::log1p(-theta[j] * xi);
    mean_log /= nd;
    profile[j] = nd * (std::log(-theta[j] / mean_log) - mean_log - 1.0);
  }

  // Posterior-mean of theta under the profile likelihood.
  double theta_hat = 0.0;
  for (std::size_t j = 0; j < grid; ++j) {
    double denom = 0.0;
    for (std::size_t l = 0; l < grid; ++l) denom += std::exp(profile[l] - profile[j]);
    const double weight = 1.0 / denom;
    if (std::isfinite(weight)) theta_hat += theta[j] * weight;
  }

  double k = 0.0;
  for (double xi : x) k += std::log1p(-theta_hat * xi);
  k /= nd;
  const double sigma = -k / theta_hat;

  if (opts.weakly_informative_prior) {
    constexpr double kPseudo = 10.0;
    k = k * nd / (nd + kPseudo) + kPseudo * 0.5 / (nd + kPseudo);
  }
  if (std::isnan(k)) k = std::numeric_limits<double>::infinity();
  return {k, sigma, n};
}

}  // namespace

DrawLogLikCube::DrawLogLikCube(std::size_t n_draws, std::size_t n_obs, std::size_t n_models,
                               std::vector<double> values)
    : n_draws_(n_draws), n_obs_(n_obs), n_models_(n_models), values_(std::move(values)) {
  if (n_obs_ == 0 || n_models_ == 0) {
    throw Error(ErrorCode::InvalidInput, "cube needs at least one observation and one model");
  }
  if (n_draws_ < kMinDraws) {
    throw Error(ErrorCode::InvalidInput, "cube has " + std::to_string(n_draws_) +
                                             " draws; at least " + std::to_string(kMinDraws) +
                                             " are required");
  }
  if (values_.size() != n_draws_ * n_obs_ * n_models_) {
    throw Error(ErrorCode::InvalidInput, "cube value count does not match S*n*K");
  }
  for (std::size_t idx = 0; idx < values_.size(); ++idx) {
    if (!std::isfinite(values_[idx])) {
      const std::size_t k = idx % n_models_;
      const std::size_t i = (idx / n_models_) % n_obs_;
      const std::size_t s = idx / (n_models_ * n_obs_);
      throw Error(ErrorCode::InvalidInput, "non-finite log-likelihood at draw " + std::to_string(s) +
                                               ", observation " + std::to_string(i) + ", model " +
                                               std::to_string(k));
    }
  }
}

std::vector<double> DrawLogLikCube::cell(std::size_t i, std::size_t k) const {
  std::vector<double> out(n_draws_);
  for (std::size_t s = 0; s < n_draws_; ++s) out[s] = (*this)(s, i, k);
  return out;
}

ParetoFit fit_generalized_pareto(std::span<const double> sample, const GpdFitOptions& opts) {
  if (sample.size() < opts.min_size) {
    throw Error(ErrorCode::TooFewTailSamples,
                "need at least " + std::to_string(opts.min_size) + " samples, got " +
                    std::to_string(sample.size()));
  }
  for (double v : sample) {
    if (!std::isfinite(v) || v <= 0.0) {
      throw Error(ErrorCode::InvalidInput, "GPD sample entries must be finite and positive");
    }
  }
  std::vector<double> sorted(sample.begin(), sample.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) {
    throw Error(ErrorCode::DegenerateSample, "all sample entries are equal");
  }
  return fit_sorted(sorted, opts);
}

double gpd_quantile(double p, double k, double sigma) {
  if (std::abs(k) < 1e-12) return -sigma * std::log1p(-p);
  return sigma * std::expm1(-k * std::log1p(-p)) / k;
}

std::size_t tail_length(std::size_t n_draws) {
  const double s = static_cast<double>(n_draws);
  const auto by_fraction = static_cast<std::size_t>(std::ceil(s / 5.0));
  const auto by_root = static_cast<std::size_t>(std::ceil(3.0 * std::sqrt(s)));
  return std::max(std::min(by_fraction, by_root), kMinTailSize);
}

SmoothedWeightVector psis_smooth(std::span<const double> log_ratios) {
  const std::size_t n = log_ratios.size();
  if (n < kMinDraws) {
    throw Error(ErrorCode::InvalidInput, "psis_smooth needs at least " + std::to_string(kMinDraws) +
                                             " ratios, got " + std::to_string(n));
  }
  for (double r : log_ratios) {
    if (!std::isfinite(r)) throw Error(ErrorCode::InvalidInput, "log ratios must be finite");
  }

  SmoothedWeightVector out;
  out.log_weights.assign(log_ratios.begin(), log_ratios.end());

  const std::size_t tail = tail_length(n);
  out.tail_size = tail;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return log_ratios[a] < log_ratios[b]; });

  const double max_ratio = log_ratios[order[n - 1]];
  const double cutoff_raw = log_ratios[order[n - tail - 1]];
  const double cutoff = cutoff_raw - max_ratio;
  const double exp_cutoff = std::exp(cutoff);

  std::vector<double> exceedances(tail);
  for (std::size_t j = 0; j < tail; ++j) {
    exceedances[j] = std::exp(log_ratios[order[n - tail + j]] - max_ratio) - exp_cutoff;
  }
  if (exceedances.front() == exceedances.back()) {
    out.degenerate = true;
    return out;
  }

  const ParetoFit fit = fit_sorted(exceedances, GpdFitOptions{});
  out.khat = fit.khat;
  if (!std::isfinite(fit.khat)) return out;

  const double td = static_cast<double>(tail);
  for (std::size_t j = 0; j < tail; ++j) {
    const double p = (static_cast<double>(j) + 0.5) / td;
    const double smoothed = std::log(gpd_quantile(p, fit.khat, fit.sigma) + exp_cutoff) + max_ratio;
    // Clamp into [cutoff, max] so the transform stays monotone and truncated.
    out.log_weights[order[n - tail + j]] = std::clamp(smoothed, cutoff_raw, max_ratio);
  }
  return out;
}

double loo_lpd(std::span<const double> loglik_draws, SmoothedWeightVector* weights_out) {
  std::vector<double> ratios(loglik_draws.size());
  std::transform(loglik_draws.begin(), loglik_draws.end(), ratios.begin(),
                 [](double v) { return -v; });
  SmoothedWeightVector smoothed = psis_smooth(ratios);
  const auto& lw = smoothed.log_weights;

  double num_max = -std::numeric_limits<double>::infinity();
  double den_max = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < lw.size(); ++s) {
    num_max = std::max(num_max, lw[s] + loglik_draws[s]);
    den_max = std::max(den_max, lw[s]);
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t s = 0; s < lw.size(); ++s) {
    num += std::exp(lw[s] + loglik_draws[s] - num_max);
    den += std::exp(lw[s] - den_max);
  }
  if (weights_out != nullptr) *weights_out = std::move(smoothed);
  return (num_max - den_max) + std::log(num / den);
}

LooMatrix psis_loo_matrix(const DrawLogLikCube& cube, int threads) {
  const std::size_t n = cube.n_obs();
  const std::size_t k_models = cube.n_models();
  LooMatrix out;
  out.lpd.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k_models));
  out.khat.resize(out.lpd.rows(), out.lpd.cols());
  out.degenerate.resize(out.lpd.rows(), out.lpd.cols());
  out.high_khat.resize(out.lpd.rows(), out.lpd.cols());

  parallel_for(n * k_models, threads, [&](std::size_t cell) {
    const std::size_t i = cell / k_models;
    const std::size_t k = cell % k_models;
    const auto ri = static_cast<Eigen::Index>(i);
    const auto ck = static_cast<Eigen::Index>(k);
    SmoothedWeightVector weights;
    out.lpd(ri, ck) = loo_lpd(cube.cell(i, k), &weights);
    out.khat(ri, ck) = weights.degenerate ? kKhatSentinel : weights.khat;
    out.degenerate(ri, ck) = weights.degenerate;
    out.high_khat(ri, ck) = !weights.degenerate && !(weights.khat <= kKhatWarning);
  });
  return out;
}

}  // namespace stackpred::psis
