#ifndef STACKPRED_WEIGHTING_HPP
#define STACKPRED_WEIGHTING_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace stackpred {

/// n x K matrix of pointwise log predictive densities (rows: observations,
/// columns: models). Entries may be -inf (zero density) but never NaN or +inf,
/// and every row keeps at least one finite entry.
class LogPredictiveMatrix {
 public:
  explicit LogPredictiveMatrix(Eigen::MatrixXd lpd);

  std::size_t n_obs() const { return static_cast<std::size_t>(lpd_.rows()); }
  std::size_t n_models() const { return static_cast<std::size_t>(lpd_.cols()); }
  const Eigen::MatrixXd& values() const { return lpd_; }
  double operator()(std::size_t i, std::size_t k) const {
    return lpd_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
  }

 private:
  Eigen::MatrixXd lpd_;
};

/// Nonnegative weights summing to one within 1e-12.
class SimplexWeights {
 public:
  static constexpr double kSumTolerance = 1e-12;

  /// Validates; throws InvalidInput.
  explicit SimplexWeights(std::vector<double> w);

  /// Clips tiny negatives to zero and rescales to sum one.
  static SimplexWeights normalized(std::vector<double> w);
  static SimplexWeights uniform(std::size_t k);
  static SimplexWeights vertex(std::size_t k, std::size_t index);

  std::size_t size() const { return w_.size(); }
  double operator[](std::size_t k) const { return w_[k]; }
  const std::vector<double>& values() const { return w_; }

 private:
  std::vector<double> w_;
};

enum class WeightMethod { Stacking, Bma, PseudoBma, PseudoBmaBb, FourierStacking };

std::string_view to_string(WeightMethod method);
WeightMethod parse_weight_method(std::string_view name);

struct WeightReport {
  WeightMethod method = WeightMethod::Stacking;
  SimplexWeights weights = SimplexWeights::uniform(1);
  /// Final log score; NaN where no objective is optimized.
  double objective = 0.0;
  int iterations = 0;
  bool converged = true;
  nlohmann::json diagnostics = nlohmann::json::object();
};

/// sum_i log sum_k w_k exp(lpd[i,k]). Returns -inf when some row has zero mass
/// under w. Throws DimensionMismatch.
double log_score(const LogPredictiveMatrix& matrix, const SimplexWeights& w);

struct OptimizerOptions {
  /// Infinity-norm bound on the softmax-coordinate gradient of the mean log score.
  double gradient_tolerance = 1e-8;
  int max_iterations = 10000;
};

/// Groups of exactly equal columns (only groups of size > 1 are listed).
std::vector<std::vector<std::size_t>> duplicate_columns(const Eigen::MatrixXd& values);

/// Maximizes the log score over the simplex by quasi-Newton ascent in softmax
/// coordinates, starting from uniform weights. Exact duplicate columns are
/// merged before optimizing and share their weight equally afterwards. Never
/// throws on non-convergence; see WeightReport::converged.
WeightReport stacking_weights(const LogPredictiveMatrix& matrix, const OptimizerOptions& opts = {});

/// softmax of log marginal likelihoods. Entries may be -inf; throws
/// AllNegInfinity when all are.
WeightReport bma_weights(std::span<const double> log_marginal_liks);

/// softmax of per-model elpd (column sums).
WeightReport pseudo_bma_weights(const LogPredictiveMatrix& matrix);

struct BayesianBootstrapOptions {
  std::size_t replicates = 1000;
  std::uint64_t seed = 0;
  int threads = 1;
  /// Test hook: every replicate uses uniform observation weights.
  bool force_uniform_dirichlet = false;
};

/// Pseudo-BMA averaged over Bayesian-bootstrap replicates of the elpd.
WeightReport pseudo_bma_bb_weights(const LogPredictiveMatrix& matrix, const BayesianBootstrapOptions& opts);

/// Exhaustive search over the simplex lattice with spacing `step` (K <= 3).
/// The lexicographically first maximizer wins ties; objectives within a
/// relative 1e-13 count as tied.
SimplexWeights grid_oracle_weights(const LogPredictiveMatrix& matrix, double step);

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace stackpred

#endif  // STACKPRED_WEIGHTING_HPP
