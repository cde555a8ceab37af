#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "oracles.hpp"
#include "stackpred/distributed_stack.hpp"
#include "stackpred/error.hpp"
#include "stackpred/rng.hpp"

using namespace stackpred;
using namespace stackpred::distributed;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

GaussianPosterior full_posterior(const ConjugateGaussianModel& m, const std::vector<double>& y) {
  long double sum = 0.0L;
  for (double v : y) sum += v;
  const long double precision = 1.0L / m.tau2 + static_cast<long double>(y.size()) / m.sigma2;
  return {static_cast<double>((m.mu0 / m.tau2 + sum / m.sigma2) / precision), static_cast<double>(1.0L / precision)};
}

}  // namespace

TEST_CASE("shard plans") {
  const auto one = shard_data(7, 1, ShardStrategy::Random, 3);
  CHECK(std::all_of(one.assignment.begin(), one.assignment.end(), [](auto s) { return s == 0; }));
  const auto contiguous = shard_data(4, 2, ShardStrategy::Contiguous, 0);
  CHECK(contiguous.shards() == std::vector<std::vector<std::size_t>>{{0, 1}, {2, 3}});
  const auto uneven = shard_data(7, 3, ShardStrategy::Contiguous, 0);
  CHECK(uneven.shards() == std::vector<std::vector<std::size_t>>{{0, 1, 2}, {3, 4}, {5, 6}});
  const auto random = shard_data(1000, 10, ShardStrategy::Random, 42);
  for (const auto& s : random.shards()) CHECK(s.size() == 100);
  CHECK(random.assignment == shard_data(1000, 10, ShardStrategy::Random, 42).assignment);
  CHECK(random.assignment != shard_data(1000, 10, ShardStrategy::Random, 43).assignment);
  CHECK(code_of([] { shard_data(3, 4, ShardStrategy::Random, 0); }) == ErrorCode::TooManyShards);
  CHECK(code_of([] { shard_data(3, 0, ShardStrategy::Random, 0); }) == ErrorCode::InvalidInput);
  CHECK(parse_shard_strategy(to_string(ShardStrategy::Contiguous)) == ShardStrategy::Contiguous);
}

TEST_CASE("worker without tempering is the full posterior") {
  const ConjugateGaussianModel m{0.5, 2.0, 1.5};
  const std::vector<double> y{0.1, 1.4, -0.7, 2.2};
  const auto s = run_worker(3, y, m, 1);
  const auto full = full_posterior(m, y);
  CHECK(s.post_mean == doctest::Approx(full.mean).epsilon(1e-14));
  CHECK(s.post_var == doctest::Approx(full.var).epsilon(1e-14));
  CHECK(s.shard_id == 3);
  CHECK(s.n_shard == 4);
}

TEST_CASE("worker flat prior limit") {
  const ConjugateGaussianModel m{0.0, 1e12, 2.0};
  const std::vector<double> y{1.0, 2.0, 4.5};
  const auto s = run_worker(0, y, m, 5);
  CHECK(std::abs(s.post_mean / 2.5 - 1.0) < 1e-6);
  CHECK(std::abs(s.post_var / (2.0 / 3.0) - 1.0) < 1e-6);
}

TEST_CASE("worker agrees with quadrature under the tempered prior") {
  const ConjugateGaussianModel m{0.0, 1.0, 1.0};
  const std::vector<double> shard{1.0, 3.0};
  const auto s = run_worker(0, shard, m, 2);
  auto density = [&](long double mu) {
    long double v = std::pow(oracle::normal_pdf(mu, 0.0L, 1.0L), 0.5L);
    for (double y : shard) v *= oracle::normal_pdf(y, mu, 1.0L);
    return v;
  };
  const long double z = oracle::simpson(density, -20.0L, 20.0L);
  const long double mean = oracle::simpson([&](long double mu) { return mu * density(mu); }, -20.0L, 20.0L) / z;
  const long double second = oracle::simpson([&](long double mu) { return mu * mu * density(mu); }, -20.0L, 20.0L) / z;
  CHECK(s.post_mean == doctest::Approx(static_cast<double>(mean)).epsilon(1e-10));
  CHECK(s.post_var == doctest::Approx(static_cast<double>(second - mean * mean)).epsilon(1e-9));
  CHECK(s.post_mean == doctest::Approx(1.6));
  CHECK(s.post_var == doctest::Approx(0.4));
}

TEST_CASE("worker errors") {
  const ConjugateGaussianModel m{};
  CHECK(code_of([&] { run_worker(0, std::vector<double>{}, m, 1); }) == ErrorCode::EmptyShard);
}

TEST_CASE("consensus combination") {
  const ConjugateGaussianModel m{};
  const SubposteriorSummary a{0, m, 1.5, 0.2, 10};
  const std::vector<SubposteriorSummary> single{a};
  const auto s = consensus_posterior(single);
  CHECK(s.mean == 1.5);
  CHECK(s.var == 0.2);
  const std::vector<SubposteriorSummary> twins{a, {1, m, 1.5, 0.2, 10}};
  const auto t = consensus_posterior(twins);
  CHECK(t.mean == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(t.var == doctest::Approx(0.1).epsilon(1e-15));
  const std::vector<SubposteriorSummary> mixed{a, {1, {0.0, 2.0, 1.0}, 1.0, 0.1, 10}};
  CHECK(code_of([&] { consensus_posterior(mixed); }) == ErrorCode::ModelMismatch);
}

TEST_CASE("consensus recovers the full-data posterior") {
  const ConjugateGaussianModel m{0.3, 0.8, 1.7};
  CounterRng rng(8);
  std::vector<double> y(500);
  for (double& v : y) v = rng.normal(1.0, 1.3);
  const auto full = full_posterior(m, y);
  for (std::size_t shards : {1u, 2u, 5u, 10u}) {
    for (auto strategy : {ShardStrategy::Random, ShardStrategy::Contiguous}) {
      const auto plan = shard_data(y.size(), shards, strategy, 5);
      std::vector<SubposteriorSummary> summaries;
      for (const auto& idx : plan.shards()) {
        std::vector<double> part;
        for (auto i : idx) part.push_back(y[i]);
        summaries.push_back(run_worker(summaries.size(), part, m, shards));
      }
      const auto c = consensus_posterior(summaries);
      CHECK(std::abs(c.mean - full.mean) < 1e-10);
      CHECK(std::abs(c.var - full.var) < 1e-10);
    }
  }
}

TEST_CASE("uniform averaging") {
  const ConjugateGaussianModel m{};
  const std::vector<SubposteriorSummary> s{{0, m, 1.0, 0.4, 5}, {1, m, 3.0, 0.2, 5}};
  const auto u = uniform_average_posterior(s);
  CHECK(u.mean == 2.0);
  CHECK(u.var == doctest::Approx(0.15));
}

TEST_CASE("subpredictive matrix") {
  const ConjugateGaussianModel m{0.0, 1.0, 2.0};
  const std::vector<SubposteriorSummary> s{{0, m, 1.0, 0.5, 5}, {1, m, -1.0, 0.25, 5}};
  const std::vector<double> at_mean{1.0};
  const auto lpd = subpredictive_matrix(s, at_mean);
  CHECK(lpd(0, 0) == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi * 2.5)).epsilon(1e-14));
  const std::vector<SubposteriorSummary> same{s[0], {1, m, 1.0, 0.5, 5}};
  const std::vector<double> pts{0.0, 2.0, -1.0};
  const auto dup = subpredictive_matrix(same, pts);
  CHECK(dup.values().col(0) == dup.values().col(1));
  CHECK(code_of([&] { subpredictive_matrix(s, std::vector<double>{}); }) == ErrorCode::InvalidInput);
}

TEST_CASE("stacking over heterogeneous shards stays on the simplex") {
  const ConjugateGaussianModel m{};
  const std::vector<SubposteriorSummary> s{{0, m, -1.0, 0.05, 20}, {1, m, 0.0, 0.05, 20}, {2, m, 2.0, 0.05, 20}};
  CounterRng rng(3);
  std::vector<double> validation(100);
  for (double& v : validation) v = rng.normal(0.3, 1.2);
  std::vector<double> test(200);
  for (double& v : test) v = rng.normal(0.3, 1.2);
  const auto r = aggregate_stacking(s, validation, test);
  double total = 0.0;
  for (double w : r.weights->values()) {
    CHECK(w >= 0.0);
    total += w;
  }
  CHECK(std::abs(total - 1.0) <= 1e-12);
  CHECK(std::isfinite(r.test_log_score));
  CHECK(r.diagnostics["single_shard_test_log_scores"].size() == 3);
}

TEST_CASE("a single shard makes every method coincide") {
  SimConfig config;
  config.n = 200;
  config.shard_count = 1;
  const auto reports = simulate(config, 5);
  REQUIRE(reports.size() == 3);
  CHECK(reports[0].test_log_score == doctest::Approx(reports[1].test_log_score).epsilon(1e-14));
  CHECK(reports[1].test_log_score == doctest::Approx(reports[2].test_log_score).epsilon(1e-14));
}

TEST_CASE("contiguous shards of trend data get non-uniform weights") {
  SimConfig config;
  config.n = 1000;
  config.shard_count = 5;
  config.strategy = ShardStrategy::Contiguous;
  config.truth = {"trend", 0.0, 1.0, 6.0};
  config.methods = {AggregationMethod::Stacking};
  const auto reports = simulate(config, 11);
  const auto& w = reports[0].weights->values();
  const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
  CHECK(*hi - *lo > 0.1);
}

TEST_CASE("simulation is deterministic and replayable") {
  SimConfig config;
  config.n = 600;
  config.shard_count = 6;
  MessageLog log;
  const auto a = simulate(config, 21, 1, &log);
  const auto b = simulate(config, 21, 4);
  REQUIRE(a.size() == b.size());
  for (std::size_t r = 0; r < a.size(); ++r) CHECK(nlohmann::json(a[r]).dump() == nlohmann::json(b[r]).dump());
  CHECK(log.messages.size() == 1 + 6 + 6);
  CHECK(log.messages[0]["type"] == "sim_config");
  const auto replayed = replay(log);
  for (std::size_t r = 0; r < a.size(); ++r) CHECK(nlohmann::json(a[r]).dump() == nlohmann::json(replayed[r]).dump());

  // Results arriving out of order replay the same way.
  MessageLog shuffled = log;
  std::reverse(shuffled.messages.begin() + 7, shuffled.messages.end());
  const auto again = replay(shuffled);
  for (std::size_t r = 0; r < a.size(); ++r) CHECK(nlohmann::json(a[r]).dump() == nlohmann::json(again[r]).dump());

  MessageLog truncated = log;
  truncated.messages.pop_back();
  CHECK(code_of([&] { replay(truncated); }) == ErrorCode::InvalidInput);
}

TEST_CASE("config validation and JSON round trip") {
  SimConfig config;
  config.n = 300;
  config.shard_count = 3;
  config.truth = {"trend", 1.0, 2.0, 0.5};
  config.methods = {AggregationMethod::Consensus, AggregationMethod::Stacking};
  const nlohmann::json j = config;
  const auto back = j.get<SimConfig>();
  CHECK(nlohmann::json(back) == j);

  SimConfig bad = config;
  bad.validation_fraction = 1.5;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::ConfigError);
  bad = config;
  bad.model.tau2 = -1.0;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::ConfigError);
  bad = config;
  bad.shard_count = 280;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::TooManyShards);
  CHECK(code_of([] { nlohmann::json{{"n", 10}}.get<SimConfig>(); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse_aggregation_method("median"); }) == ErrorCode::ConfigError);
}
