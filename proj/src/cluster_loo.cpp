#include "stackpred/cluster_loo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "stackpred/error.hpp"
#include "stackpred/parallel.hpp"

namespace stackpred::cluster {

NeighborhoodStructure::NeighborhoodStructure(std::size_t n, std::vector<std::vector<std::size_t>> neighbors)
    : n_(n), neighbors_(std::move(neighbors)) {
  if (neighbors_.size() != n_) {
    throw Error(ErrorCode::InvalidInput, "structure declares n = " + std::to_string(n_) + " but lists " +
                                             std::to_string(neighbors_.size()) + " neighbor sets");
  }
  for (std::size_t i = 0; i < n_; ++i) {
    auto& set = neighbors_[i];
    for (std::size_t j : set) {
      if (j >= n_) {
        throw Error(ErrorCode::IndexError, "neighbor " + std::to_string(j) + " of " + std::to_string(i) +
                                               " is out of range");
      }
      if (j == i) {
        throw Error(ErrorCode::InvalidInput, "observation " + std::to_string(i) + " lists itself as a neighbor");
      }
    }
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
  }
}

NeighborhoodStructure NeighborhoodStructure::full(std::size_t n) {
  std::vector<std::vector<std::size_t>> sets(n);
  for (std::size_t i = 0; i < n; ++i) {
    sets[i].reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sets[i].push_back(j);
    }
  }
  return NeighborhoodStructure(n, std::move(sets));
}

NeighborhoodStructure NeighborhoodStructure::empty(std::size_t n) {
  return NeighborhoodStructure(n, std::vector<std::vector<std::size_t>>(n));
}

void ConjugateGaussianModel::validate() const {
  if (!std::isfinite(mu0) || !std::isfinite(tau2) || !std::isfinite(sigma2) || !(tau2 > 0.0) ||
      !(sigma2 > 0.0)) {
    throw Error(ErrorCode::InvalidInput, "conjugate model needs finite mu0 and positive tau2, sigma2");
  }
}

double normal_logpdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * d * d / var;
}

GaussianPosterior conjugate_posterior(const ConjugateGaussianModel& model,
                                      std::span<const std::size_t> conditioning,
                                      std::span<const double> data) {
  double sum = 0.0;
  for (std::size_t j : conditioning) {
    if (j >= data.size()) throw Error(ErrorCode::IndexError, "conditioning index " + std::to_string(j) + " out of range");
    sum += data[j];
  }
  const double m = static_cast<double>(conditioning.size());
  const double precision = 1.0 / model.tau2 + m / model.sigma2;
  return {(model.mu0 / model.tau2 + sum / model.sigma2) / precision, 1.0 / precision};
}

double conjugate_predictive(const ConjugateGaussianModel& model, std::size_t target,
                            std::span<const std::size_t> conditioning, std::span<const double> data) {
  if (target >= data.size()) throw Error(ErrorCode::IndexError, "target index " + std::to_string(target) + " out of range");
  const GaussianPosterior post = conjugate_posterior(model, conditioning, data);
  return normal_logpdf(data[target], post.mean, post.var + model.sigma2);
}

ConjugateGaussianAdapter::ConjugateGaussianAdapter(ConjugateGaussianModel model) : model_(model) {
  model_.validate();
}

double ConjugateGaussianAdapter::predictive_logdensity(std::size_t target,
                                                       std::span<const std::size_t> conditioning,
                                                       std::span<const double> data) const {
  return conjugate_predictive(model_, target, conditioning, data);
}

LogPredictiveMatrix cluster_loo_matrix(std::span<const ModelAdapter* const> adapters,
                                       std::span<const double> data, const NeighborhoodStructure& structure,
                                       int threads) {
  if (adapters.empty()) throw Error(ErrorCode::InvalidInput, "at least one model adapter is required");
  if (structure.size() != data.size()) {
    throw Error(ErrorCode::DimensionMismatch, "structure covers " + std::to_string(structure.size()) +
                                                  " points but data has " + std::to_string(data.size()));
  }
  const std::size_t n = data.size();
  const std::size_t k_models = adapters.size();
  Eigen::MatrixXd lpd(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k_models));
  parallel_for(n, threads, [&](std::size_t i) {
    for (std::size_t k = 0; k < k_models; ++k) {
      try {
        lpd(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
            adapters[k]->predictive_logdensity(i, structure.neighbors(i), data);
      } catch (const Error& e) {
        throw Error(e.code(), "cell (" + std::to_string(i) + ", " + std::to_string(k) + "): " + e.what());
      }
    }
  });
  return LogPredictiveMatrix(std::move(lpd));
}

NeighborhoodStructure knn_structure(std::span<const double> data, std::size_t k) {
  const std::size_t n = data.size();
  if (k >= n) {
    throw Error(ErrorCode::KTooLarge, "k = " + std::to_string(k) + " must be below n = " + std::to_string(n));
  }
  std::vector<std::vector<std::size_t>> sets(n);
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < n; ++i) {
    others.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) others.push_back(j);
    }
    auto closer = [&](std::size_t a, std::size_t b) {
      const double da = std::abs(data[a] - data[i]);
      const double db = std::abs(data[b] - data[i]);
      return da != db ? da < db : a < b;
    };
    std::partial_sort(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(k), others.end(), closer);
    sets[i].assign(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return NeighborhoodStructure(n, std::move(sets));
}

}  // namespace stackpred::cluster
