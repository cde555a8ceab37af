#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "stackpred/cluster_loo.hpp"
#include "stackpred/error.hpp"
#include "stackpred/rng.hpp"

using namespace stackpred;
using namespace stackpred::cluster;

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

// log p(y_i | y_D) = log int N(y_i; mu, s2) prod_D N(y_j; mu, s2) N(mu; mu0, t2) dmu - log of the same without y_i.
double quadrature_predictive(const ConjugateGaussianModel& m, std::size_t i, const std::vector<std::size_t>& cond,
                             const std::vector<double>& data) {
  auto joint = [&](bool with_target) {
    return [&, with_target](long double mu) {
      long double v = oracle::normal_pdf(mu, m.mu0, m.tau2);
      for (std::size_t j : cond) v *= oracle::normal_pdf(data[j], mu, m.sigma2);
      if (with_target) v *= oracle::normal_pdf(data[i], mu, m.sigma2);
      return v;
    };
  };
  const long double num = oracle::simpson(joint(true), -15.0L, 15.0L);
  const long double den = oracle::simpson(joint(false), -15.0L, 15.0L);
  return static_cast<double>(std::log(num / den));
}

}  // namespace

TEST_CASE("structure validation and normalization") {
  NeighborhoodStructure s(3, {{2, 1, 2}, {}, {0}});
  CHECK(s.all()[0] == std::vector<std::size_t>{1, 2});
  CHECK(code_of([] { NeighborhoodStructure(2, {{0}, {}}); }) == ErrorCode::InvalidInput);
  CHECK(code_of([] { NeighborhoodStructure(2, {{5}, {}}); }) == ErrorCode::IndexError);
  CHECK(code_of([] { NeighborhoodStructure(2, {{1}}); }) == ErrorCode::InvalidInput);
  CHECK(NeighborhoodStructure::full(4).neighbors(2).size() == 3);
  CHECK(NeighborhoodStructure::empty(4).neighbors(2).empty());
}

TEST_CASE("model validation") {
  CHECK(code_of([] { ConjugateGaussianModel{0.0, 0.0, 1.0}.validate(); }) == ErrorCode::InvalidInput);
  CHECK(code_of([] { ConjugateGaussianModel{0.0, 1.0, -1.0}.validate(); }) == ErrorCode::InvalidInput);
  CHECK(code_of([] { ConjugateGaussianModel{NAN, 1.0, 1.0}.validate(); }) == ErrorCode::InvalidInput);
}

TEST_CASE("empty conditioning gives the prior predictive") {
  const ConjugateGaussianModel m{0.3, 2.0, 0.5};
  const std::vector<double> data{1.2, -0.4};
  CHECK(conjugate_predictive(m, 0, {}, data) ==
        doctest::Approx(static_cast<double>(oracle::normal_logpdf(1.2, 0.3, 2.5))).epsilon(1e-14));
}

TEST_CASE("flat prior limit") {
  const ConjugateGaussianModel m{0.0, 1e12, 1.0};
  const std::vector<double> data{0.7, 2.0};
  const std::vector<std::size_t> cond{1};
  const double expected = static_cast<double>(oracle::normal_logpdf(0.7, 2.0, 2.0));
  CHECK(std::abs(conjugate_predictive(m, 0, cond, data) - expected) < 1e-6);
}

TEST_CASE("conjugate predictive agrees with quadrature") {
  const ConjugateGaussianModel m{0.0, 1.0, 1.0};
  const std::vector<double> data{0.5, -0.3, 1.1};
  const std::vector<std::size_t> cond{1, 2};
  CHECK(conjugate_predictive(m, 0, cond, data) ==
        doctest::Approx(quadrature_predictive(m, 0, cond, data)).epsilon(1e-10));

  CounterRng rng(4);
  std::vector<double> y(12);
  for (double& v : y) v = rng.normal(1.0, 2.0);
  const ConjugateGaussianModel m2{-0.5, 3.0, 4.0};
  const std::vector<std::size_t> cond2{0, 3, 5, 7, 11};
  CHECK(conjugate_predictive(m2, 2, cond2, y) ==
        doctest::Approx(quadrature_predictive(m2, 2, cond2, y)).epsilon(1e-9));
}

TEST_CASE("conjugate predictive rejects bad indices") {
  const ConjugateGaussianModel m{};
  const std::vector<double> data{0.0, 1.0};
  const std::vector<std::size_t> bad{4};
  CHECK(code_of([&] { conjugate_predictive(m, 3, {}, data); }) == ErrorCode::IndexError);
  CHECK(code_of([&] { conjugate_predictive(m, 0, bad, data); }) == ErrorCode::IndexError);
}

TEST_CASE("full neighborhoods reproduce exact LOO bit for bit") {
  CounterRng rng(5);
  std::vector<double> y(15);
  for (double& v : y) v = rng.normal();
  const ConjugateGaussianAdapter a({0.0, 1.0, 1.0});
  const ConjugateGaussianAdapter b({1.0, 0.2, 2.0});
  const std::vector<const ModelAdapter*> adapters{&a, &b};
  const auto lpd = cluster_loo_matrix(adapters, y, NeighborhoodStructure::full(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (j != i) others.push_back(j);
    }
    CHECK(lpd(i, 0) == conjugate_predictive(a.model(), i, others, y));
    CHECK(lpd(i, 1) == conjugate_predictive(b.model(), i, others, y));
  }
}

TEST_CASE("empty neighborhoods give prior predictive rows") {
  const std::vector<double> y{0.1, -2.0, 3.0};
  const ConjugateGaussianAdapter a({0.0, 1.0, 1.0});
  const std::vector<const ModelAdapter*> adapters{&a};
  const auto lpd = cluster_loo_matrix(adapters, y, NeighborhoodStructure::empty(3));
  for (std::size_t i = 0; i < 3; ++i) CHECK(lpd(i, 0) == conjugate_predictive(a.model(), i, {}, y));
}

TEST_CASE("cluster LOO checks sizes and attaches cell context") {
  const std::vector<double> y{0.1, -2.0, 3.0};
  const ConjugateGaussianAdapter a({0.0, 1.0, 1.0});
  const std::vector<const ModelAdapter*> adapters{&a};
  CHECK(code_of([&] { cluster_loo_matrix(adapters, y, NeighborhoodStructure::full(4)); }) ==
        ErrorCode::DimensionMismatch);

  struct Failing final : ModelAdapter {
    double predictive_logdensity(std::size_t target, std::span<const std::size_t>, std::span<const double>) const override {
      if (target == 1) throw Error(ErrorCode::InvalidInput, "boom");
      return 0.0;
    }
  } failing;
  const std::vector<const ModelAdapter*> bad{&a, &failing};
  try {
    cluster_loo_matrix(bad, y, NeighborhoodStructure::full(3));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("(1, 1)") != std::string::npos);
  }
}

TEST_CASE("locality: data outside the neighborhood does not matter") {
  CounterRng rng(6);
  std::vector<double> y(30);
  for (double& v : y) v = rng.normal();
  const auto structure = knn_structure(y, 4);
  const ConjugateGaussianAdapter a({0.0, 1.0, 1.0});
  const std::vector<const ModelAdapter*> adapters{&a};
  const auto before = cluster_loo_matrix(adapters, y, structure);
  std::vector<double> changed = y;
  const auto& b0 = structure.all()[0];
  std::size_t outside = 1;
  while (std::find(b0.begin(), b0.end(), outside) != b0.end()) ++outside;
  changed[outside] += 50.0;
  const auto after = cluster_loo_matrix(adapters, changed, structure);
  CHECK(before(0, 0) == after(0, 0));
}

TEST_CASE("kNN structures") {
  const std::vector<double> three{0.0, 1.0, 10.0};
  const auto s = knn_structure(three, 1);
  CHECK(s.all() == std::vector<std::vector<std::size_t>>{{1}, {0}, {1}});
  const auto full = knn_structure(three, 2);
  CHECK(full.all() == NeighborhoodStructure::full(3).all());
  CHECK(code_of([&] { knn_structure(three, 3); }) == ErrorCode::KTooLarge);

  const std::vector<double> line{0.0, 1.0, 2.0, 3.0, 4.0};
  const auto adj = knn_structure(line, 2);
  for (std::size_t i = 1; i + 1 < line.size(); ++i) {
    CHECK(adj.all()[i] == std::vector<std::size_t>{i - 1, i + 1});
  }
  CHECK(adj.all()[0] == std::vector<std::size_t>{1, 2});

  // Ties break toward the lower index.
  const std::vector<double> tie{0.0, -1.0, 1.0};
  CHECK(knn_structure(tie, 1).all()[0] == std::vector<std::size_t>{1});
}

TEST_CASE("thread count does not change the cluster LOO matrix") {
  CounterRng rng(7);
  std::vector<double> y(60);
  for (double& v : y) v = rng.normal();
  const ConjugateGaussianAdapter a({0.0, 1.0, 1.0});
  const std::vector<const ModelAdapter*> adapters{&a};
  const auto s = knn_structure(y, 7);
  CHECK(cluster_loo_matrix(adapters, y, s, 1).values() == cluster_loo_matrix(adapters, y, s, 5).values());
}
