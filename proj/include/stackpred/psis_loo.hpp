#ifndef STACKPRED_PSIS_LOO_HPP
#define STACKPRED_PSIS_LOO_HPP

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace stackpred::psis {

/// Shape value written in place of khat when the importance ratios carry no
/// tail information (zero variance). Kept finite so it survives serialization.
inline constexpr double kKhatSentinel = -9999.0;

/// khat above this flags the importance-sampling estimate as unreliable.
inline constexpr double kKhatWarning = 0.7;

inline constexpr std::size_t kMinDraws = 16;
inline constexpr std::size_t kMinTailSize = 5;

/// Per-draw, per-observation, per-model log-likelihood tensor, stored
/// draw-major: value(s, i, k) = values[(s * n + i) * K + k].
class DrawLogLikCube {
 public:
  /// Validates shape, draw count and finiteness; throws InvalidInput.
  DrawLogLikCube(std::size_t n_draws, std::size_t n_obs, std::size_t n_models,
                 std::vector<double> values);

  std::size_t n_draws() const { return n_draws_; }
  std::size_t n_obs() const { return n_obs_; }
  std::size_t n_models() const { return n_models_; }

  double operator()(std::size_t s, std::size_t i, std::size_t k) const {
    return values_[(s * n_obs_ + i) * n_models_ + k];
  }

  const std::vector<double>& values() const { return values_; }

  /// Draws of cell (i, k), in draw order.
  std::vector<double> cell(std::size_t i, std::size_t k) const;

 private:
  std::size_t n_draws_;
  std::size_t n_obs_;
  std::size_t n_models_;
  std::vector<double> values_;
};

struct ParetoFit {
  double khat = 0.0;
  double sigma = 1.0;
  std::size_t tail_size = 0;
};

struct GpdFitOptions {
  std::size_t min_size = 5;
  /// Base number of shape candidates; floor(sqrt(sample size)) more are added.
  std::size_t min_grid_points = 30;
  /// Shrink khat toward 0.5 with a weakly informative prior (10 pseudo-observations).
  bool weakly_informative_prior = true;
};

/// Profile-likelihood GPD estimate (Zhang & Stephens) for exceedances over a
/// threshold. Entries must be strictly positive.
ParetoFit fit_generalized_pareto(std::span<const double> sample, const GpdFitOptions& opts = {});

/// GPD quantile function; scale sigma, shape k.
double gpd_quantile(double p, double k, double sigma);

struct SmoothedWeightVector {
  std::vector<double> log_weights;
  double khat = kKhatSentinel;
  /// Set when the tail had zero variance and no smoothing was applied.
  bool degenerate = false;
  std::size_t tail_size = 0;
};

/// Tail length used for S draws: min(ceil(S/5), ceil(3 sqrt(S))), never below kMinTailSize.
std::size_t tail_length(std::size_t n_draws);

/// Pareto-smooths log importance ratios. The largest tail_length(S) ratios are
/// replaced by the log expected order statistics of the fitted GPD, then every
/// weight is capped at the raw maximum. Log-weights are returned unnormalized,
/// on the same scale as the input.
SmoothedWeightVector psis_smooth(std::span<const double> log_ratios);

struct LooMatrix {
  Eigen::MatrixXd lpd;                         // n x K
  Eigen::MatrixXd khat;                        // n x K, kKhatSentinel where degenerate
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> degenerate;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> high_khat;

  std::size_t n_obs() const { return static_cast<std::size_t>(lpd.rows()); }
  std::size_t n_models() const { return static_cast<std::size_t>(lpd.cols()); }
};

/// LOO log predictive density for one cell given that cell's draws.
double loo_lpd(std::span<const double> loglik_draws, SmoothedWeightVector* weights_out = nullptr);

/// Pointwise PSIS-LOO for every (observation, model) cell. Cells are
/// independent; `threads` only changes wall time, never the result.
LooMatrix psis_loo_matrix(const DrawLogLikCube& cube, int threads = 1);

}  // namespace stackpred::psis

#endif  // STACKPRED_PSIS_LOO_HPP
