#include "stackpred/distributed_stack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stackpred/error.hpp"
#include "stackpred/json_util.hpp"
#include "stackpred/parallel.hpp"
#include "stackpred/rng.hpp"

namespace stackpred::distributed {

namespace {

// Substream ids; each consumer of randomness owns one.
constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kValidationStream = 2;
constexpr std::uint64_t kShardStream = 3;
constexpr std::uint64_t kTestStream = 4;

std::vector<std::size_t> seeded_permutation(std::size_t n, CounterRng rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

void require_summaries(std::span<const SubposteriorSummary> summaries) {
  if (summaries.empty()) throw Error(ErrorCode::InvalidInput, "at least one subposterior is required");
  for (const auto& s : summaries) {
    if (!(s.model == summaries.front().model)) {
      throw Error(ErrorCode::ModelMismatch, "shard " + std::to_string(s.shard_id) + " used a different model");
    }
    if (!(s.post_var > 0.0) || !std::isfinite(s.post_mean)) {
      throw Error(ErrorCode::InvalidInput, "subposterior of shard " + std::to_string(s.shard_id) + " is invalid");
    }
  }
}

double gaussian_test_score(const GaussianPosterior& post, double sigma2, std::span<const double> test_points) {
  double total = 0.0;
  for (double y : test_points) total += cluster::normal_logpdf(y, post.mean, post.var + sigma2);
  return total;
}

double truth_draw(const TruthSpec& truth, double position, CounterRng& rng) {
  const double z = rng.normal();
  if (truth.kind == "trend") return truth.mean + truth.slope * (position - 0.5) + truth.sd * z;
  return truth.mean + truth.sd * z;
}

const nlohmann::json& find_message(const MessageLog& log, const std::string& type) {
  for (const auto& m : log.messages) {
    if (m.value("type", "") == type) return m;
  }
  throw Error(ErrorCode::InvalidInput, "message log has no '" + type + "' message");
}

std::vector<AggregationReport> aggregate_all(const SimConfig& config, std::vector<SubposteriorSummary> summaries,
                                             const SimulationData& sim) {
  std::sort(summaries.begin(), summaries.end(),
            [](const auto& a, const auto& b) { return a.shard_id < b.shard_id; });
  std::vector<double> validation;
  validation.reserve(sim.validation_indices.size());
  for (std::size_t i : sim.validation_indices) validation.push_back(sim.data[i]);

  std::vector<AggregationReport> reports;
  for (AggregationMethod method : config.methods) {
    switch (method) {
      case AggregationMethod::Stacking:
        reports.push_back(aggregate_stacking(summaries, validation, sim.test_points));
        break;
      case AggregationMethod::Consensus:
        reports.push_back(aggregate_consensus(summaries, sim.test_points));
        break;
      case AggregationMethod::UniformAverage:
        reports.push_back(aggregate_uniform_average(summaries, sim.test_points));
        break;
    }
  }
  return reports;
}

}  // namespace

std::string to_string(ShardStrategy strategy) {
  return strategy == ShardStrategy::Random ? "random" : "contiguous";
}

ShardStrategy parse_shard_strategy(const std::string& name) {
  if (name == "random") return ShardStrategy::Random;
  if (name == "contiguous") return ShardStrategy::Contiguous;
  throw Error(ErrorCode::ConfigError, "unknown shard strategy '" + name + "'");
}

std::string to_string(AggregationMethod method) {
  switch (method) {
    case AggregationMethod::Stacking: return "stacking";
    case AggregationMethod::Consensus: return "consensus";
    case AggregationMethod::UniformAverage: return "uniform_average";
  }
  return "unknown";
}

AggregationMethod parse_aggregation_method(const std::string& name) {
  if (name == "stacking") return AggregationMethod::Stacking;
  if (name == "consensus") return AggregationMethod::Consensus;
  if (name == "uniform_average") return AggregationMethod::UniformAverage;
  throw Error(ErrorCode::ConfigError, "unknown aggregation method '" + name + "'");
}

std::vector<std::vector<std::size_t>> ShardPlan::shards() const {
  std::vector<std::vector<std::size_t>> out(shard_count);
  for (std::size_t i = 0; i < assignment.size(); ++i) out.at(assignment[i]).push_back(i);
  return out;
}

ShardPlan shard_data(std::size_t n, std::size_t shard_count, ShardStrategy strategy, std::uint64_t seed) {
  if (shard_count == 0) throw Error(ErrorCode::InvalidInput, "shard count must be positive");
  if (shard_count > n) {
    throw Error(ErrorCode::TooManyShards, std::to_string(shard_count) + " shards for " + std::to_string(n) + " points");
  }
  ShardPlan plan;
  plan.shard_count = shard_count;
  plan.strategy = strategy;
  plan.assignment.assign(n, 0);
  if (strategy == ShardStrategy::Random) {
    const auto perm = seeded_permutation(n, CounterRng(seed, kShardStream));
    for (std::size_t p = 0; p < n; ++p) plan.assignment[perm[p]] = p % shard_count;
  } else {
    const std::size_t base = n / shard_count;
    const std::size_t extra = n % shard_count;
    std::size_t i = 0;
    for (std::size_t m = 0; m < shard_count; ++m) {
      const std::size_t size = base + (m < extra ? 1 : 0);
      for (std::size_t c = 0; c < size; ++c) plan.assignment[i++] = m;
    }
  }
  return plan;
}

SubposteriorSummary run_worker(std::size_t shard_id, std::span<const double> shard,
                               const ConjugateGaussianModel& model, std::size_t shard_count) {
  if (shard.empty()) throw Error(ErrorCode::EmptyShard, "shard " + std::to_string(shard_id) + " is empty");
  if (shard_count == 0) throw Error(ErrorCode::InvalidInput, "shard count must be positive");
  model.validate();
  double sum = 0.0;
  for (double y : shard) sum += y;
  const double tempered_tau2 = static_cast<double>(shard_count) * model.tau2;
  const double precision = 1.0 / tempered_tau2 + static_cast<double>(shard.size()) / model.sigma2;
  SubposteriorSummary out;
  out.shard_id = shard_id;
  out.model = model;
  out.post_mean = (model.mu0 / tempered_tau2 + sum / model.sigma2) / precision;
  out.post_var = 1.0 / precision;
  out.n_shard = shard.size();
  return out;
}

GaussianPosterior consensus_posterior(std::span<const SubposteriorSummary> summaries) {
  require_summaries(summaries);
  if (summaries.size() == 1) return {summaries[0].post_mean, summaries[0].post_var};
  double precision = 0.0;
  double weighted = 0.0;
  for (const auto& s : summaries) {
    precision += 1.0 / s.post_var;
    weighted += s.post_mean / s.post_var;
  }
  return {weighted / precision, 1.0 / precision};
}

GaussianPosterior uniform_average_posterior(std::span<const SubposteriorSummary> summaries) {
  require_summaries(summaries);
  const double m = static_cast<double>(summaries.size());
  double mean = 0.0;
  double var = 0.0;
  for (const auto& s : summaries) {
    mean += s.post_mean;
    var += s.post_var;
  }
  return {mean / m, var / (m * m)};
}

LogPredictiveMatrix subpredictive_matrix(std::span<const SubposteriorSummary> summaries,
                                         std::span<const double> points) {
  require_summaries(summaries);
  if (points.empty()) throw Error(ErrorCode::InvalidInput, "at least one evaluation point is required");
  Eigen::MatrixXd lpd(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(summaries.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t m = 0; m < summaries.size(); ++m) {
      const auto& s = summaries[m];
      lpd(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)) =
          cluster::normal_logpdf(points[i], s.post_mean, s.post_var + s.model.sigma2);
    }
  }
  return LogPredictiveMatrix(std::move(lpd));
}

AggregationReport aggregate_consensus(std::span<const SubposteriorSummary> summaries,
                                      std::span<const double> test_points) {
  const GaussianPosterior post = consensus_posterior(summaries);
  AggregationReport report;
  report.method = AggregationMethod::Consensus;
  report.shard_count = summaries.size();
  report.recovered_posterior = post;
  report.test_log_score = gaussian_test_score(post, summaries.front().model.sigma2, test_points);
  return report;
}

AggregationReport aggregate_uniform_average(std::span<const SubposteriorSummary> summaries,
                                            std::span<const double> test_points) {
  const GaussianPosterior post = uniform_average_posterior(summaries);
  AggregationReport report;
  report.method = AggregationMethod::UniformAverage;
  report.shard_count = summaries.size();
  report.weights = SimplexWeights::uniform(summaries.size());
  report.recovered_posterior = post;
  report.test_log_score = gaussian_test_score(post, summaries.front().model.sigma2, test_points);
  return report;
}

AggregationReport aggregate_stacking(std::span<const SubposteriorSummary> summaries,
                                     std::span<const double> validation_points,
                                     std::span<const double> test_points) {
  const WeightReport fit = stacking_weights(subpredictive_matrix(summaries, validation_points));
  const LogPredictiveMatrix test_matrix = subpredictive_matrix(summaries, test_points);

  AggregationReport report;
  report.method = AggregationMethod::Stacking;
  report.shard_count = summaries.size();
  report.weights = fit.weights;
  report.test_log_score = log_score(test_matrix, fit.weights);

  std::vector<double> single;
  for (std::size_t m = 0; m < summaries.size(); ++m) {
    single.push_back(log_score(test_matrix, SimplexWeights::vertex(summaries.size(), m)));
  }
  report.diagnostics["validation_objective"] = json_number(fit.objective);
  report.diagnostics["iterations"] = fit.iterations;
  report.diagnostics["converged"] = fit.converged;
  report.diagnostics["single_shard_test_log_scores"] = single;
  report.diagnostics["max_single_shard_test_log_score"] = *std::max_element(single.begin(), single.end());
  return report;
}

void SimConfig::validate() const {
  if (n < 2) throw Error(ErrorCode::ConfigError, "n must be at least 2");
  if (shard_count < 1) throw Error(ErrorCode::ConfigError, "M must be positive");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw Error(ErrorCode::ConfigError, "validation fraction v must lie in (0, 1)");
  }
  if (n_test < 1) throw Error(ErrorCode::ConfigError, "test set must be nonempty");
  if (methods.empty()) throw Error(ErrorCode::ConfigError, "at least one aggregation method is required");
  if (truth.kind != "gaussian" && truth.kind != "trend") {
    throw Error(ErrorCode::ConfigError, "unknown truth kind '" + truth.kind + "'");
  }
  if (!(truth.sd > 0.0) || !std::isfinite(truth.mean) || !std::isfinite(truth.slope)) {
    throw Error(ErrorCode::ConfigError, "truth parameters must be finite with sd > 0");
  }
  try {
    model.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  const auto n_val = static_cast<std::size_t>(std::ceil(validation_fraction * static_cast<double>(n)));
  if (n_val >= n || n - n_val < shard_count) {
    throw Error(ErrorCode::TooManyShards, "not enough training points for " + std::to_string(shard_count) + " shards");
  }
}

SimulationData generate_simulation_data(const SimConfig& config, std::uint64_t seed) {
  config.validate();
  SimulationData sim;
  const std::size_t n = config.n;

  CounterRng data_rng(seed, kDataStream);
  sim.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double position = static_cast<double>(i) / static_cast<double>(n - 1);
    sim.data[i] = truth_draw(config.truth, position, data_rng);
  }

  const auto n_val = static_cast<std::size_t>(std::ceil(config.validation_fraction * static_cast<double>(n)));
  const auto perm = seeded_permutation(n, CounterRng(seed, kValidationStream));
  std::vector<bool> held(n, false);
  for (std::size_t p = 0; p < n_val; ++p) held[perm[p]] = true;
  for (std::size_t i = 0; i < n; ++i) (held[i] ? sim.validation_indices : sim.train_indices).push_back(i);

  CounterRng test_rng(seed, kTestStream);
  sim.test_points.resize(config.n_test);
  for (double& y : sim.test_points) {
    const double position = test_rng.uniform();
    y = truth_draw(config.truth, position, test_rng);
  }
  return sim;
}

std::vector<AggregationReport> simulate(const SimConfig& config, std::uint64_t seed, int threads, MessageLog* log) {
  const SimulationData sim = generate_simulation_data(config, seed);
  const ShardPlan plan = shard_data(sim.train_indices.size(), config.shard_count, config.strategy, seed);

  // Shard membership in original data indices.
  std::vector<std::vector<std::size_t>> assignments = plan.shards();
  for (auto& shard : assignments) {
    for (auto& idx : shard) idx = sim.train_indices[idx];
  }

  if (log != nullptr) {
    log->messages.push_back({{"type", "sim_config"}, {"seed", seed}, {"config", config}});
    for (std::size_t m = 0; m < assignments.size(); ++m) {
      log->messages.push_back({{"type", "assign_shard"}, {"shard_id", m}, {"indices", assignments[m]}});
    }
  }

  // Workers share nothing; each writes only its own slot.
  std::vector<SubposteriorSummary> summaries(assignments.size());
  parallel_for(assignments.size(), threads, [&](std::size_t m) {
    std::vector<double> values;
    values.reserve(assignments[m].size());
    for (std::size_t idx : assignments[m]) values.push_back(sim.data[idx]);
    summaries[m] = run_worker(m, values, config.model, config.shard_count);
  });

  if (log != nullptr) {
    for (const auto& s : summaries) {
      nlohmann::json message = s;
      message["type"] = "subposterior_result";
      log->messages.push_back(std::move(message));
    }
  }
  return aggregate_all(config, std::move(summaries), sim);
}

std::vector<AggregationReport> replay(const MessageLog& log) {
  const nlohmann::json& header = find_message(log, "sim_config");
  const SimConfig config = header.at("config").get<SimConfig>();
  const auto seed = header.at("seed").get<std::uint64_t>();
  const SimulationData sim = generate_simulation_data(config, seed);

  std::vector<SubposteriorSummary> summaries;
  std::vector<bool> assigned(config.shard_count, false);
  for (const auto& m : log.messages) {
    const std::string type = m.value("type", "");
    if (type == "assign_shard") {
      const auto id = m.at("shard_id").get<std::size_t>();
      if (id >= config.shard_count) throw Error(ErrorCode::InvalidInput, "assignment to unknown shard");
      assigned[id] = true;
    } else if (type == "subposterior_result") {
      summaries.push_back(m.get<SubposteriorSummary>());
    }
  }
  if (summaries.size() != config.shard_count) {
    throw Error(ErrorCode::InvalidInput, "message log holds " + std::to_string(summaries.size()) +
                                             " results for " + std::to_string(config.shard_count) + " shards");
  }
  for (const auto& s : summaries) {
    if (s.shard_id >= config.shard_count || !assigned[s.shard_id]) {
      throw Error(ErrorCode::InvalidInput, "result for shard " + std::to_string(s.shard_id) + " without assignment");
    }
  }
  return aggregate_all(config, std::move(summaries), sim);
}

void to_json(nlohmann::json& j, const SimConfig& config) {
  std::vector<std::string> methods;
  for (auto m : config.methods) methods.push_back(to_string(m));
  j = {{"n", config.n},
       {"M", config.shard_count},
       {"strategy", to_string(config.strategy)},
       {"seed", config.seed},
       {"model", {{"mu0", config.model.mu0}, {"tau2", config.model.tau2}, {"sigma2", config.model.sigma2}}},
       {"truth",
        {{"kind", config.truth.kind},
         {"params", {{"mean", config.truth.mean}, {"sd", config.truth.sd}, {"slope", config.truth.slope}}}}},
       {"v", config.validation_fraction},
       {"methods", methods},
       {"n_test", config.n_test}};
}

void from_json(const nlohmann::json& j, SimConfig& config) {
  try {
    config = SimConfig{};
    config.n = j.at("n").get<std::size_t>();
    config.shard_count = j.at("M").get<std::size_t>();
    config.strategy = parse_shard_strategy(j.value("strategy", std::string("random")));
    config.seed = j.value("seed", std::uint64_t{0});
    const auto& model = j.at("model");
    config.model = {model.at("mu0").get<double>(), model.at("tau2").get<double>(), model.at("sigma2").get<double>()};
    if (j.contains("truth")) {
      const auto& truth = j.at("truth");
      config.truth.kind = truth.value("kind", std::string("gaussian"));
      const nlohmann::json params = truth.value("params", nlohmann::json::object());
      config.truth.mean = params.value("mean", 0.0);
      config.truth.sd = params.value("sd", 1.0);
      config.truth.slope = params.value("slope", 0.0);
    }
    config.validation_fraction = j.value("v", 0.1);
    if (j.contains("methods")) {
      config.methods.clear();
      for (const auto& m : j.at("methods")) config.methods.push_back(parse_aggregation_method(m.get<std::string>()));
    }
    config.n_test = j.value("n_test", std::size_t{1000});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("malformed simulation config: ") + e.what());
  }
}

void to_json(nlohmann::json& j, const SubposteriorSummary& summary) {
  j = {{"shard_id", summary.shard_id},
       {"model", {{"mu0", summary.model.mu0}, {"tau2", summary.model.tau2}, {"sigma2", summary.model.sigma2}}},
       {"post_mean", summary.post_mean},
       {"post_var", summary.post_var},
       {"n_shard", summary.n_shard}};
}

void from_json(const nlohmann::json& j, SubposteriorSummary& summary) {
  summary.shard_id = j.at("shard_id").get<std::size_t>();
  const auto& model = j.at("model");
  summary.model = {model.at("mu0").get<double>(), model.at("tau2").get<double>(), model.at("sigma2").get<double>()};
  summary.post_mean = j.at("post_mean").get<double>();
  summary.post_var = j.at("post_var").get<double>();
  summary.n_shard = j.at("n_shard").get<std::size_t>();
}

void to_json(nlohmann::json& j, const AggregationReport& report) {
  j = {{"method", to_string(report.method)}, {"M", report.shard_count}};
  j["weights"] = report.weights ? nlohmann::json(report.weights->values()) : nlohmann::json(nullptr);
  j["test_log_score"] = json_number(report.test_log_score);
  j["recovered_posterior"] = report.recovered_posterior
                                 ? nlohmann::json{{"mean", report.recovered_posterior->mean},
                                                  {"var", report.recovered_posterior->var}}
                                 : nlohmann::json(nullptr);
  j["diagnostics"] = report.diagnostics;
}

}  // namespace stackpred::distributed
