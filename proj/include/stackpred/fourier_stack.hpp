#ifndef STACKPRED_FOURIER_STACK_HPP
#define STACKPRED_FOURIER_STACK_HPP

#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "stackpred/weighting.hpp"

namespace stackpred::fourier {

/// Characteristic-function entries below this magnitude are treated as noise.
inline constexpr double kMagnitudeFloor = 1e-8;
inline constexpr double kNormalizationTolerance = 1e-6;
inline constexpr double kEdgeTolerance = 1e-12;
inline constexpr std::size_t kMinGridSize = 64;

enum class EdgeCheck { Require, Skip };

/// Density sampled at x0 + j*dx, j = 0..N-1, with N a power of two.
class GridDensity {
 public:
  /// Validates N, spacing, nonnegativity and unit trapezoidal mass; with
  /// EdgeCheck::Require also that both edge values are below 1e-12.
  GridDensity(double x0, double dx, std::vector<double> values, EdgeCheck edges = EdgeCheck::Require);

  /// Samples `pdf` on the grid and rescales to unit trapezoidal mass.
  static GridDensity sample(double x0, double dx, std::size_t n, const std::function<double(double)>& pdf);

  double x0() const { return x0_; }
  double dx() const { return dx_; }
  std::size_t size() const { return values_.size(); }
  double x(std::size_t j) const { return x0_ + static_cast<double>(j) * dx_; }
  double x_max() const { return x(size() - 1); }
  const std::vector<double>& values() const { return values_; }

  double trapezoid() const;
  /// Linear interpolation; zero outside [x0, x_max].
  double at(double x) const;

  bool same_grid(const GridDensity& other) const;

 private:
  double x0_;
  double dx_;
  std::vector<double> values_;
};

struct LogCF {
  std::vector<double> freqs;                     // DFT angular frequencies, FFT order
  std::vector<std::complex<double>> log_values;  // log characteristic function
  std::vector<bool> valid;                       // contiguous band around t = 0
};

/// Log characteristic function with its phase unwrapped outward from t = 0.
/// A frequency is valid when |cf| >= 1e-8 there and at every frequency between
/// it and zero.
LogCF density_to_log_cf(const GridDensity& density);

struct StackOptions {
  /// Reject results whose clipped negative mass exceeds this fraction.
  double max_clipped_fraction = 0.05;
};

struct StackResult {
  GridDensity density;
  double clipped_fraction = 0.0;
  std::size_t band_size = 0;  // frequencies used, including t = 0
};

/// Precomputes component log characteristic functions once so many weight
/// vectors can be stacked cheaply.
class LogCfStacker {
 public:
  explicit LogCfStacker(std::vector<GridDensity> components);

  std::size_t size() const { return components_.size(); }
  const std::vector<GridDensity>& components() const { return components_; }
  const std::vector<LogCF>& log_cfs() const { return log_cfs_; }

  /// Weighted sum of log cfs over the band valid for every component with a
  /// nonzero weight; zero cf elsewhere. Weights only need to be nonnegative.
  /// Throws AllInvalid when the band is only t = 0 and ExcessiveClipping when
  /// `opts` is given and the clipped mass exceeds its limit.
  StackResult stack(std::span<const double> weights, const StackOptions* opts = nullptr) const;

 private:
  std::vector<GridDensity> components_;
  std::vector<LogCF> log_cfs_;
};

/// Stacks log characteristic functions, exponentiates and inverts. Throws
/// GridMismatch, DimensionMismatch, AllInvalid, ExcessiveClipping.
StackResult stack_log_cf(std::span<const GridDensity> components, const SimplexWeights& w,
                         const StackOptions& opts = {});

/// Pointwise sum_k w_k f_k. Throws GridMismatch.
GridDensity linear_mixture(std::span<const GridDensity> components, const SimplexWeights& w);

struct FourierFitOptions {
  int multistarts = 10;
  std::uint64_t seed = 0;
  int max_iterations = 500;
  /// Central-difference step for the internal gradient.
  double fd_step = 1e-6;
  /// Iterates stay in {w : w_k >= min_weight}, keeping every component active.
  double min_weight = 1e-5;
  int threads = 1;
  StackOptions stack{};
};

/// Held-out log score of the stacked density, evaluated by linear interpolation.
class FourierFitProblem {
 public:
  FourierFitProblem(std::vector<GridDensity> components, std::vector<double> heldout);

  std::size_t size() const { return stacker_.size(); }
  const LogCfStacker& stacker() const { return stacker_; }

  /// Objective at nonnegative weights (not necessarily summing to one).
  double objective(std::span<const double> w) const;
  /// Central finite differences of objective() along each coordinate axis.
  std::vector<double> gradient(std::span<const double> w, double step) const;

 private:
  LogCfStacker stacker_;
  std::vector<double> heldout_;
};

/// Multistart projected-gradient ascent of the held-out log score. Start 0 is
/// the uniform vector, the rest are Dirichlet(1) draws from per-start substreams.
WeightReport fit_fourier_weights(std::vector<GridDensity> components, std::vector<double> heldout,
                                 const FourierFitOptions& opts = {});

/// Euclidean projection onto {w : w_k >= floor, sum w = 1}.
std::vector<double> project_to_simplex(std::span<const double> v, double floor = 0.0);

}  // namespace stackpred::fourier

#endif  // STACKPRED_FOURIER_STACK_HPP
