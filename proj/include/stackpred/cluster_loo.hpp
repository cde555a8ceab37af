#ifndef STACKPRED_CLUSTER_LOO_HPP
#define STACKPRED_CLUSTER_LOO_HPP

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "stackpred/weighting.hpp"

namespace stackpred::cluster {

/// For each observation i, the (0-based) indices it is conditioned on.
/// Neighbor lists are kept sorted ascending and never contain i itself.
class NeighborhoodStructure {
 public:
  /// Validates ranges and self-exclusion; sorts and deduplicates each list.
  NeighborhoodStructure(std::size_t n, std::vector<std::vector<std::size_t>> neighbors);

  /// B_i = every j != i.
  static NeighborhoodStructure full(std::size_t n);
  /// B_i = {} (prior predictive everywhere).
  static NeighborhoodStructure empty(std::size_t n);

  std::size_t size() const { return n_; }
  std::span<const std::size_t> neighbors(std::size_t i) const { return neighbors_.at(i); }
  const std::vector<std::vector<std::size_t>>& all() const { return neighbors_; }

 private:
  std::size_t n_;
  std::vector<std::vector<std::size_t>> neighbors_;
};

/// Predictive density of one held-out point given a conditioning subset.
/// Implementations must be reentrant: cluster_loo_matrix calls them from
/// several threads at once.
class ModelAdapter {
 public:
  virtual ~ModelAdapter() = default;
  virtual double predictive_logdensity(std::size_t target, std::span<const std::size_t> conditioning,
                                       std::span<const double> data) const = 0;
};

/// Normal mean with known variance: y ~ N(mu, sigma2), mu ~ N(mu0, tau2).
struct ConjugateGaussianModel {
  double mu0 = 0.0;
  double tau2 = 1.0;
  double sigma2 = 1.0;

  /// Throws InvalidInput unless tau2 > 0 and sigma2 > 0 (all finite).
  void validate() const;
  friend bool operator==(const ConjugateGaussianModel&, const ConjugateGaussianModel&) = default;
};

struct GaussianPosterior {
  double mean;
  double var;
};

/// Posterior of mu given the points in `conditioning`.
GaussianPosterior conjugate_posterior(const ConjugateGaussianModel& model,
                                      std::span<const std::size_t> conditioning,
                                      std::span<const double> data);

/// log N(data[target]; mu_n, tau_n^2 + sigma2) for the posterior on `conditioning`.
double conjugate_predictive(const ConjugateGaussianModel& model, std::size_t target,
                            std::span<const std::size_t> conditioning, std::span<const double> data);

double normal_logpdf(double x, double mean, double var);

class ConjugateGaussianAdapter final : public ModelAdapter {
 public:
  explicit ConjugateGaussianAdapter(ConjugateGaussianModel model);
  double predictive_logdensity(std::size_t target, std::span<const std::size_t> conditioning,
                               std::span<const double> data) const override;
  const ConjugateGaussianModel& model() const { return model_; }

 private:
  ConjugateGaussianModel model_;
};

/// lpd[i, k] = adapters[k]->predictive_logdensity(i, B_i, data). Adapter
/// errors are rethrown with the (i, k) cell attached.
LogPredictiveMatrix cluster_loo_matrix(std::span<const ModelAdapter* const> adapters,
                                       std::span<const double> data, const NeighborhoodStructure& structure,
                                       int threads = 1);

/// B_i = the k points closest to data[i] in absolute difference, ties to the lower index.
NeighborhoodStructure knn_structure(std::span<const double> data, std::size_t k);

}  // namespace stackpred::cluster

#endif  // STACKPRED_CLUSTER_LOO_HPP
