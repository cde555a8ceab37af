#ifndef STACKPRED_EXPERIMENTS_HPP
#define STACKPRED_EXPERIMENTS_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "stackpred/rng.hpp"
#include "stackpred/weighting.hpp"

namespace stackpred::experiments {

struct NormalComponent {
  double mean = 0.0;
  double sd = 1.0;
};

/// 0.3 N(-2, 1) + 0.7 N(2, 1).
std::vector<NormalComponent> reference_components();
std::vector<double> reference_weights();

/// Irrelevant candidate j (0-based): N(20 + j, 1).
NormalComponent bad_component(std::size_t j);

std::vector<double> sample_mixture(std::span<const NormalComponent> components, std::span<const double> weights,
                                   std::size_t n, CounterRng rng);

/// lpd[i, k] = log density of component k at points[i].
LogPredictiveMatrix component_log_densities(std::span<const NormalComponent> components,
                                            std::span<const double> points);

/// Stacking weights of the reference components on n draws from the reference mixture.
WeightReport mixture_weight_recovery(std::size_t n, std::uint64_t seed);

struct SweepOptions {
  std::vector<std::size_t> bad_counts{0, 1, 2, 4, 8};
  std::size_t n = 5000;
  std::size_t n_test = 5000;
  std::uint64_t seed = 0;
};

struct SweepRow {
  std::size_t num_bad_models = 0;
  WeightMethod method = WeightMethod::Stacking;
  double test_log_score = 0.0;
  std::vector<double> weights;
};

/// Stacking and pseudo-BMA on the reference components plus J irrelevant ones,
/// for every J in opts.bad_counts. Training and test data are shared across J.
std::vector<SweepRow> robustness_sweep(const SweepOptions& opts);

/// {"kind": "robustness_sweep", "seed": ..., "rows": [...]}
nlohmann::json sweep_report_json(const std::vector<SweepRow>& rows, std::uint64_t seed);

}  // namespace stackpred::experiments

#endif  // STACKPRED_EXPERIMENTS_HPP
