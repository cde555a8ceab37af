#ifndef STACKPRED_DISTRIBUTED_STACK_HPP
#define STACKPRED_DISTRIBUTED_STACK_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stackpred/cluster_loo.hpp"
#include "stackpred/weighting.hpp"

namespace stackpred::distributed {

using cluster::ConjugateGaussianModel;
using cluster::GaussianPosterior;

enum class ShardStrategy { Random, Contiguous };

std::string to_string(ShardStrategy strategy);
ShardStrategy parse_shard_strategy(const std::string& name);

/// Shard index (0-based) of every observation.
struct ShardPlan {
  std::size_t shard_count = 1;
  std::vector<std::size_t> assignment;
  ShardStrategy strategy = ShardStrategy::Random;

  /// Observation indices per shard, ascending.
  std::vector<std::vector<std::size_t>> shards() const;
};

/// Random: a seeded permutation dealt round-robin. Contiguous: index-ordered
/// blocks whose sizes differ by at most one (larger blocks first).
/// Throws TooManyShards when shard_count > n, InvalidInput when it is 0.
ShardPlan shard_data(std::size_t n, std::size_t shard_count, ShardStrategy strategy, std::uint64_t seed);

struct SubposteriorSummary {
  std::size_t shard_id = 0;
  ConjugateGaussianModel model;
  double post_mean = 0.0;
  double post_var = 1.0;
  std::size_t n_shard = 0;

  friend bool operator==(const SubposteriorSummary&, const SubposteriorSummary&) = default;
};

/// Conjugate posterior of one shard under the prior raised to 1/shard_count.
SubposteriorSummary run_worker(std::size_t shard_id, std::span<const double> shard,
                               const ConjugateGaussianModel& model, std::size_t shard_count);

enum class AggregationMethod { Stacking, Consensus, UniformAverage };

std::string to_string(AggregationMethod method);
AggregationMethod parse_aggregation_method(const std::string& name);

struct AggregationReport {
  AggregationMethod method = AggregationMethod::Consensus;
  std::size_t shard_count = 1;
  std::optional<SimplexWeights> weights;
  double test_log_score = 0.0;
  std::optional<GaussianPosterior> recovered_posterior;
  nlohmann::json diagnostics = nlohmann::json::object();
};

/// Precision-weighted combination; exact full-data posterior under 1/M tempering.
/// Throws ModelMismatch when summaries disagree on the model.
GaussianPosterior consensus_posterior(std::span<const SubposteriorSummary> summaries);

/// Equal-weight parameter averaging: mean of means, variance sum(var)/M^2.
GaussianPosterior uniform_average_posterior(std::span<const SubposteriorSummary> summaries);

/// lpd[i, m] = log N(points[i]; post_mean_m, post_var_m + sigma2).
LogPredictiveMatrix subpredictive_matrix(std::span<const SubposteriorSummary> summaries,
                                         std::span<const double> points);

AggregationReport aggregate_consensus(std::span<const SubposteriorSummary> summaries,
                                      std::span<const double> test_points);
AggregationReport aggregate_uniform_average(std::span<const SubposteriorSummary> summaries,
                                            std::span<const double> test_points);
/// Stacks subposterior predictives with weights fit on `validation_points`.
AggregationReport aggregate_stacking(std::span<const SubposteriorSummary> summaries,
                                     std::span<const double> validation_points,
                                     std::span<const double> test_points);

struct TruthSpec {
  /// "gaussian": N(mean, sd^2). "trend": mean + slope * (u - 1/2) + sd * z with
  /// u = i/(n-1) along the data index (uniform on [0, 1] for test points).
  std::string kind = "gaussian";
  double mean = 0.0;
  double sd = 1.0;
  double slope = 0.0;
};

struct SimConfig {
  std::size_t n = 1000;
  std::size_t shard_count = 10;
  ShardStrategy strategy = ShardStrategy::Random;
  std::uint64_t seed = 0;
  ConjugateGaussianModel model;
  TruthSpec truth;
  double validation_fraction = 0.1;
  std::vector<AggregationMethod> methods{AggregationMethod::Stacking, AggregationMethod::Consensus,
                                         AggregationMethod::UniformAverage};
  std::size_t n_test = 1000;

  /// Throws ConfigError.
  void validate() const;
};

/// Coordinator/worker message records; one JSON object per NDJSON line.
struct MessageLog {
  std::vector<nlohmann::json> messages;
};

struct SimulationData {
  std::vector<double> data;
  std::vector<std::size_t> validation_indices;
  std::vector<std::size_t> train_indices;
  std::vector<double> test_points;
};

/// Generates the data, validation slice and test set for (config, seed).
SimulationData generate_simulation_data(const SimConfig& config, std::uint64_t seed);

/// Runs the sharded simulation. Worker summaries are sorted by shard_id before
/// aggregation, so `threads` never changes the result. When `log` is given the
/// full message sequence is appended to it.
std::vector<AggregationReport> simulate(const SimConfig& config, std::uint64_t seed, int threads = 1,
                                        MessageLog* log = nullptr);

/// Rebuilds the reports from a recorded log: configuration and seed from the
/// header message, subposteriors from the recorded results.
std::vector<AggregationReport> replay(const MessageLog& log);

void to_json(nlohmann::json& j, const SimConfig& config);
void from_json(const nlohmann::json& j, SimConfig& config);
void to_json(nlohmann::json& j, const SubposteriorSummary& summary);
void from_json(const nlohmann::json& j, SubposteriorSummary& summary);
void to_json(nlohmann::json& j, const AggregationReport& report);

}  // namespace stackpred::distributed

#endif  // STACKPRED_DISTRIBUTED_STACK_HPP
