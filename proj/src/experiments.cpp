#include "stackpred/experiments.hpp"

#include "stackpred/cluster_loo.hpp"
#include "stackpred/error.hpp"
#include "stackpred/json_util.hpp"

namespace stackpred::experiments {

namespace {

constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kTestStream = 2;

std::vector<NormalComponent> sweep_components(std::size_t bad) {
  auto components = reference_components();
  for (std::size_t j = 0; j < bad; ++j) components.push_back(bad_component(j));
  return components;
}

}  // namespace

std::vector<NormalComponent> reference_components() { return {{-2.0, 1.0}, {2.0, 1.0}}; }

std::vector<double> reference_weights() { return {0.3, 0.7}; }

NormalComponent bad_component(std::size_t j) { return {20.0 + static_cast<double>(j), 1.0}; }

std::vector<double> sample_mixture(std::span<const NormalComponent> components, std::span<const double> weights,
                                   std::size_t n, CounterRng rng) {
  if (components.empty() || components.size() != weights.size()) {
    throw Error(ErrorCode::DimensionMismatch, "one weight per mixture component is required");
  }
  std::vector<double> out(n);
  for (double& y : out) {
    const double u = rng.uniform();
    std::size_t k = 0;
    double cumulative = weights[0];
    while (u > cumulative && k + 1 < components.size()) cumulative += weights[++k];
    y = rng.normal(components[k].mean, components[k].sd);
  }
  return out;
}

LogPredictiveMatrix component_log_densities(std::span<const NormalComponent> components,
                                            std::span<const double> points) {
  Eigen::MatrixXd lpd(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(components.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t k = 0; k < components.size(); ++k) {
      lpd(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          cluster::normal_logpdf(points[i], components[k].mean, components[k].sd * components[k].sd);
    }
  }
  return LogPredictiveMatrix(std::move(lpd));
}

WeightReport mixture_weight_recovery(std::size_t n, std::uint64_t seed) {
  const auto components = reference_components();
  const auto data = sample_mixture(components, reference_weights(), n, CounterRng(seed, kTrainStream));
  return stacking_weights(component_log_densities(components, data));
}

std::vector<SweepRow> robustness_sweep(const SweepOptions& opts) {
  const auto truth = reference_components();
  const auto train = sample_mixture(truth, reference_weights(), opts.n, CounterRng(opts.seed, kTrainStream));
  const auto test = sample_mixture(truth, reference_weights(), opts.n_test, CounterRng(opts.seed, kTestStream));

  std::vector<SweepRow> rows;
  for (std::size_t bad : opts.bad_counts) {
    const auto components = sweep_components(bad);
    const LogPredictiveMatrix train_lpd = component_log_densities(components, train);
    const LogPredictiveMatrix test_lpd = component_log_densities(components, test);
    for (const WeightReport& fit : {stacking_weights(train_lpd), pseudo_bma_weights(train_lpd)}) {
      rows.push_back({bad, fit.method, log_score(test_lpd, fit.weights), fit.weights.values()});
    }
  }
  return rows;
}

nlohmann::json sweep_report_json(const std::vector<SweepRow>& rows, std::uint64_t seed) {
  nlohmann::json out = {{"kind", "robustness_sweep"}, {"seed", seed}, {"rows", nlohmann::json::array()}};
  for (const auto& r : rows) {
    out["rows"].push_back({{"num_bad_models", r.num_bad_models},
                           {"method", to_string(r.method)},
                           {"test_log_score", json_number(r.test_log_score)},
                           {"weights", r.weights}});
  }
  return out;
}

}  // namespace stackpred::experiments
