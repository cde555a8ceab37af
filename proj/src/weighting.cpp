#include "stackpred/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>

#include "stackpred/error.hpp"
#include "stackpred/parallel.hpp"
#include "stackpred/rng.hpp"

namespace stackpred {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_same_models(const LogPredictiveMatrix& matrix, std::size_t k) {
  if (matrix.n_models() != k) {
    throw Error(ErrorCode::DimensionMismatch, "matrix has " + std::to_string(matrix.n_models()) +
                                                  " models but " + std::to_string(k) +
                                                  " weights were given");
  }
}

// exp(lpd - row max) with the row maxima kept aside; -inf entries become 0.
struct ScaledDensities {
  Eigen::MatrixXd e;
  double offset = 0.0;  // sum of row maxima
};

ScaledDensities scale_rows(const Eigen::MatrixXd& lpd) {
  ScaledDensities out;
  out.e.resize(lpd.rows(), lpd.cols());
  for (Eigen::Index i = 0; i < lpd.rows(); ++i) {
    const double row_max = lpd.row(i).maxCoeff();
    out.offset += row_max;
    for (Eigen::Index k = 0; k < lpd.cols(); ++k) out.e(i, k) = std::exp(lpd(i, k) - row_max);
  }
  return out;
}

// Mean log score in softmax coordinates z (last logit pinned at zero).
class SoftmaxObjective {
 public:
  explicit SoftmaxObjective(const Eigen::MatrixXd& e) : e_(e), n_(static_cast<double>(e.rows())) {}

  Eigen::VectorXd weights(const Eigen::VectorXd& z) const {
    const Eigen::Index k = e_.cols();
    Eigen::VectorXd logits(k);
    logits.head(k - 1) = z;
    logits(k - 1) = 0.0;
    const double m = logits.maxCoeff();
    Eigen::VectorXd w = (logits.array() - m).exp();
    return w / w.sum();
  }

  /// Returns the mean log score; `full_gradient` receives w_k (g_k - w.g) for every k.
  double evaluate(const Eigen::VectorXd& z, Eigen::VectorXd* full_gradient) const {
    const Eigen::VectorXd w = weights(z);
    const Eigen::VectorXd dens = e_ * w;
    double value = 0.0;
    for (Eigen::Index i = 0; i < dens.size(); ++i) {
      if (!(dens(i) > 0.0)) return kNegInf;
      value += std::log(dens(i));
    }
    if (full_gradient != nullptr) {
      const Eigen::VectorXd g = e_.transpose() * dens.cwiseInverse() / n_;
      *full_gradient = w.cwiseProduct(g.array().matrix() - Eigen::VectorXd::Constant(g.size(), w.dot(g)));
    }
    return value / n_;
  }

 private:
  const Eigen::MatrixXd& e_;
  double n_;
};

struct BfgsResult {
  Eigen::VectorXd weights;
  int iterations = 0;
  bool converged = false;
  double gradient_norm = 0.0;
  double kkt_violation = 0.0;
};

BfgsResult maximize_softmax_bfgs(const Eigen::MatrixXd& e, const OptimizerOptions& opts, Eigen::VectorXd z,
                                 int max_iterations) {
  const Eigen::Index dim = e.cols() - 1;
  SoftmaxObjective objective(e);

  Eigen::VectorXd full_grad;
  double value = objective.evaluate(z, &full_grad);
  Eigen::MatrixXd inv_hessian = Eigen::MatrixXd::Identity(dim, dim);
  bool fresh_hessian = true;

  BfgsResult result;
  constexpr double kArmijo = 1e-4;
  for (int iter = 0;; ++iter) {
    result.iterations = iter;
    result.gradient_norm = full_grad.lpNorm<Eigen::Infinity>();
    if (result.gradient_norm < opts.gradient_tolerance) {
      result.converged = true;
      break;
    }
    if (iter >= max_iterations) break;

    const Eigen::VectorXd grad = full_grad.head(dim);
    Eigen::VectorXd direction = inv_hessian * grad;
    double slope = grad.dot(direction);
    if (!(slope > 0.0)) {
      inv_hessian.setIdentity();
      fresh_hessian = true;
      direction = grad;
      slope = grad.dot(grad);
    }
    double step = 1.0;
    if (fresh_hessian) step = std::min(1.0, 1.0 / direction.lpNorm<Eigen::Infinity>());

    Eigen::VectorXd z_next;
    Eigen::VectorXd grad_next;
    double value_next = kNegInf;
    bool accepted = false;
    for (int backtrack = 0; backtrack < 60; ++backtrack) {
      z_next = z + step * direction;
      value_next = objective.evaluate(z_next, &grad_next);
      if (value_next >= value + kArmijo * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (fresh_hessian) break;  // no ascent possible at working precision
      inv_hessian.setIdentity();
      fresh_hessian = true;
      continue;
    }

    const Eigen::VectorXd s = z_next - z;
    const Eigen::VectorXd y = grad - grad_next.head(dim);  // gradient change of -objective
    const double sy = s.dot(y);
    if (sy > 1e-16 * s.norm() * y.norm()) {
      if (fresh_hessian) inv_hessian *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(dim, dim);
      inv_hessian = (eye - rho * s * y.transpose()) * inv_hessian * (eye - rho * y * s.transpose()) +
                    rho * s * s.transpose();
      fresh_hessian = false;
    }
    z = z_next;
    value = value_next;
    full_grad = grad_next;
  }
  result.weights = objective.weights(z);
  return result;
}

// Largest amount by which a partial derivative of the mean log score exceeds
// the simplex multiplier (which is 1). Positive values mean some weight that
// the softmax coordinates pushed to ~0 should grow.
double kkt_violation(const Eigen::MatrixXd& e, const Eigen::VectorXd& w) {
  const Eigen::VectorXd dens = e * w;
  const Eigen::VectorXd g = e.transpose() * dens.cwiseInverse() / static_cast<double>(e.rows());
  return g.maxCoeff() - 1.0;
}

// Softmax ascent can stall where a weight underflows even though raising it
// improves the score. From such a point, take an exact line search toward the
// most violated vertex and resume.
BfgsResult maximize_on_simplex(const Eigen::MatrixXd& e, const OptimizerOptions& opts) {
  const Eigen::Index k = e.cols();
  constexpr int kMaxRestarts = 50;
  constexpr int kRoundIterations = 500;
  constexpr double kKktTolerance = 1e-7;
  BfgsResult total;
  Eigen::VectorXd z = Eigen::VectorXd::Zero(k - 1);
  for (int restart = 0;; ++restart) {
    const int budget = opts.max_iterations - total.iterations;
    BfgsResult fit = maximize_softmax_bfgs(e, opts, z, restart == kMaxRestarts ? budget : std::min(budget, kRoundIterations));
    total.iterations += fit.iterations;
    total.weights = fit.weights;
    total.gradient_norm = fit.gradient_norm;
    total.converged = fit.converged;
    const bool kkt_ok = kkt_violation(e, fit.weights) <= kKktTolerance;
    if (total.iterations >= opts.max_iterations || restart == kMaxRestarts || (fit.converged && kkt_ok)) break;
    if (kkt_ok) {
      // Out of round budget but not stuck on the boundary: keep going from here.
      z = (fit.weights.head(k - 1).array() / fit.weights(k - 1)).log().matrix();
      continue;
    }

    const Eigen::VectorXd dens = e * fit.weights;
    const Eigen::VectorXd g = e.transpose() * dens.cwiseInverse();
    Eigen::Index j = 0;
    g.maxCoeff(&j);
    // Derivative of the score along w + t (e_j - w) is decreasing in t.
    const Eigen::VectorXd diff = e.col(j) - dens;
    auto slope = [&](double t) { return (diff.array() / (dens.array() + t * diff.array())).sum(); };
    double lo = 0.0;
    double hi = 1.0;
    if (slope(1.0) > 0.0) {
      lo = 1.0;
    } else {
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (slope(mid) > 0.0 ? lo : hi) = mid;
      }
    }
    Eigen::VectorXd w = (1.0 - lo) * fit.weights;
    w(j) += lo;
    w = w.cwiseMax(1e-16);
    z = (w.head(k - 1).array() / w(k - 1)).log().matrix();
  }
  total.kkt_violation = kkt_violation(e, total.weights);
  return total;
}

double score_scaled(const ScaledDensities& scaled, const Eigen::VectorXd& w) {
  const Eigen::VectorXd dens = scaled.e * w;
  double value = scaled.offset;
  for (Eigen::Index i = 0; i < dens.size(); ++i) {
    if (!(dens(i) > 0.0)) return kNegInf;
    value += std::log(dens(i));
  }
  return value;
}

WeightReport softmax_report(WeightMethod method, std::span<const double> logits) {
  WeightReport report;
  report.method = method;
  report.weights = SimplexWeights::normalized(softmax(logits));
  report.objective = std::numeric_limits<double>::quiet_NaN();
  report.iterations = 0;
  report.converged = true;
  return report;
}

std::vector<double> column_sums(const LogPredictiveMatrix& matrix) {
  std::vector<double> sums(matrix.n_models(), 0.0);
  for (std::size_t k = 0; k < matrix.n_models(); ++k) {
    for (std::size_t i = 0; i < matrix.n_obs(); ++i) sums[k] += matrix(i, k);
  }
  return sums;
}

}  // namespace

LogPredictiveMatrix::LogPredictiveMatrix(Eigen::MatrixXd lpd) : lpd_(std::move(lpd)) {
  if (lpd_.rows() < 1 || lpd_.cols() < 1) {
    throw Error(ErrorCode::InvalidInput, "log predictive matrix needs n >= 1 and K >= 1");
  }
  for (Eigen::Index i = 0; i < lpd_.rows(); ++i) {
    bool any_finite = false;
    for (Eigen::Index k = 0; k < lpd_.cols(); ++k) {
      const double v = lpd_(i, k);
      if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
        throw Error(ErrorCode::InvalidInput, "invalid log density at row " + std::to_string(i) +
                                                 ", column " + std::to_string(k));
      }
      any_finite = any_finite || std::isfinite(v);
    }
    if (!any_finite) {
      throw Error(ErrorCode::InvalidInput,
                  "row " + std::to_string(i) + " has zero density under every model");
    }
  }
}

SimplexWeights::SimplexWeights(std::vector<double> w) : w_(std::move(w)) {
  if (w_.empty()) throw Error(ErrorCode::InvalidInput, "weights must be non-empty");
  double sum = 0.0;
  for (double v : w_) {
    if (!std::isfinite(v) || v < 0.0) {
      throw Error(ErrorCode::InvalidInput, "weights must be finite and nonnegative");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw Error(ErrorCode::InvalidInput, "weights sum to " + std::to_string(sum) + ", not 1");
  }
}

SimplexWeights SimplexWeights::normalized(std::vector<double> w) {
  double sum = 0.0;
  for (double& v : w) {
    if (std::isnan(v)) throw Error(ErrorCode::InvalidInput, "NaN weight");
    v = std::max(v, 0.0);
    sum += v;
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) {
    throw Error(ErrorCode::InvalidInput, "weights cannot be normalized");
  }
  for (double& v : w) v /= sum;
  return SimplexWeights(std::move(w));
}

SimplexWeights SimplexWeights::uniform(std::size_t k) {
  return SimplexWeights(std::vector<double>(k, 1.0 / static_cast<double>(k)));
}

SimplexWeights SimplexWeights::vertex(std::size_t k, std::size_t index) {
  std::vector<double> w(k, 0.0);
  w.at(index) = 1.0;
  return SimplexWeights(std::move(w));
}

std::string_view to_string(WeightMethod method) {
  switch (method) {
    case WeightMethod::Stacking: return "stacking";
    case WeightMethod::Bma: return "bma";
    case WeightMethod::PseudoBma: return "pseudo_bma";
    case WeightMethod::PseudoBmaBb: return "pseudo_bma_bb";
    case WeightMethod::FourierStacking: return "fourier_stacking";
  }
  return "unknown";
}

WeightMethod parse_weight_method(std::string_view name) {
  if (name == "stacking") return WeightMethod::Stacking;
  if (name == "bma") return WeightMethod::Bma;
  if (name == "pseudo_bma" || name == "pseudo-bma") return WeightMethod::PseudoBma;
  if (name == "pseudo_bma_bb" || name == "pbma-bb") return WeightMethod::PseudoBmaBb;
  if (name == "fourier_stacking") return WeightMethod::FourierStacking;
  throw Error(ErrorCode::InvalidInput, "unknown weighting method '" + std::string(name) + "'");
}

std::vector<double> softmax(std::span<const double> logits) {
  double m = kNegInf;
  for (double v : logits) m = std::max(m, v);
  if (m == kNegInf) throw Error(ErrorCode::AllNegInfinity, "every logit is -inf");
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - m);
    sum += out[k];
  }
  for (double& v : out) v /= sum;
  return out;
}

double log_score(const LogPredictiveMatrix& matrix, const SimplexWeights& w) {
  require_same_models(matrix, w.size());
  const auto& lpd = matrix.values();
  double total = 0.0;
  for (Eigen::Index i = 0; i < lpd.rows(); ++i) {
    double row_max = kNegInf;
    for (Eigen::Index k = 0; k < lpd.cols(); ++k) {
      if (w[static_cast<std::size_t>(k)] > 0.0) row_max = std::max(row_max, lpd(i, k));
    }
    if (row_max == kNegInf) return kNegInf;
    double mass = 0.0;
    for (Eigen::Index k = 0; k < lpd.cols(); ++k) {
      const double wk = w[static_cast<std::size_t>(k)];
      if (wk > 0.0) mass += wk * std::exp(lpd(i, k) - row_max);
    }
    total += row_max + std::log(mass);
  }
  return total;
}

std::vector<std::vector<std::size_t>> duplicate_columns(const Eigen::MatrixXd& values) {
  std::vector<std::vector<std::size_t>> groups;
  std::vector<bool> assigned(static_cast<std::size_t>(values.cols()), false);
  for (Eigen::Index a = 0; a < values.cols(); ++a) {
    if (assigned[static_cast<std::size_t>(a)]) continue;
    std::vector<std::size_t> group{static_cast<std::size_t>(a)};
    for (Eigen::Index b = a + 1; b < values.cols(); ++b) {
      if (!assigned[static_cast<std::size_t>(b)] && values.col(a) == values.col(b)) {
        group.push_back(static_cast<std::size_t>(b));
        assigned[static_cast<std::size_t>(b)] = true;
      }
    }
    if (group.size() > 1) groups.push_back(std::move(group));
  }
  return groups;
}

WeightReport stacking_weights(const LogPredictiveMatrix& matrix, const OptimizerOptions& opts) {
  const auto& lpd = matrix.values();
  const std::size_t k_models = matrix.n_models();

  // Merge exact duplicates: unique column u represents members[u].
  const auto duplicates = duplicate_columns(lpd);
  std::vector<std::size_t> representative(k_models);
  std::iota(representative.begin(), representative.end(), std::size_t{0});
  for (const auto& group : duplicates) {
    for (std::size_t member : group) representative[member] = group.front();
  }
  std::vector<std::vector<std::size_t>> members;
  std::vector<Eigen::Index> unique_cols;
  std::map<std::size_t, std::size_t> slot;
  for (std::size_t k = 0; k < k_models; ++k) {
    auto [it, inserted] = slot.emplace(representative[k], members.size());
    if (inserted) {
      members.emplace_back();
      unique_cols.push_back(static_cast<Eigen::Index>(k));
    }
    members[it->second].push_back(k);
  }
  const auto k_unique = static_cast<Eigen::Index>(unique_cols.size());
  Eigen::MatrixXd unique_lpd(lpd.rows(), k_unique);
  for (Eigen::Index u = 0; u < k_unique; ++u) unique_lpd.col(u) = lpd.col(unique_cols[static_cast<std::size_t>(u)]);
  const ScaledDensities scaled = scale_rows(unique_lpd);

  WeightReport report;
  report.method = WeightMethod::Stacking;
  Eigen::VectorXd w_unique = Eigen::VectorXd::Ones(k_unique);
  double gradient_norm = 0.0;
  if (k_unique > 1) {
    const BfgsResult fit = maximize_on_simplex(scaled.e, opts);
    w_unique = fit.weights;
    report.iterations = fit.iterations;
    report.converged = fit.converged;
    gradient_norm = fit.gradient_norm;
    report.diagnostics["kkt_violation"] = std::max(0.0, fit.kkt_violation);

    // The returned point must beat every vertex and the uniform start.
    double best = score_scaled(scaled, w_unique);
    std::string replaced_by;
    Eigen::VectorXd uniform = Eigen::VectorXd::Constant(k_unique, 1.0 / static_cast<double>(k_unique));
    if (score_scaled(scaled, uniform) > best) {
      best = score_scaled(scaled, uniform);
      w_unique = uniform;
      replaced_by = "uniform";
    }
    for (Eigen::Index u = 0; u < k_unique; ++u) {
      Eigen::VectorXd vertex = Eigen::VectorXd::Zero(k_unique);
      vertex(u) = 1.0;
      const double value = score_scaled(scaled, vertex);
      if (value > best) {
        best = value;
        w_unique = vertex;
        replaced_by = "vertex " + std::to_string(unique_cols[static_cast<std::size_t>(u)]);
      }
    }
    if (!replaced_by.empty()) report.diagnostics["replaced_by_candidate"] = replaced_by;
  }

  std::vector<double> w(k_models, 0.0);
  for (std::size_t u = 0; u < members.size(); ++u) {
    const double share = w_unique(static_cast<Eigen::Index>(u)) / static_cast<double>(members[u].size());
    for (std::size_t member : members[u]) w[member] = share;
  }
  report.weights = SimplexWeights::normalized(std::move(w));
  report.objective = log_score(matrix, report.weights);
  report.diagnostics["gradient_norm"] = gradient_norm;
  report.diagnostics["gradient_tolerance"] = opts.gradient_tolerance;
  report.diagnostics["duplicate_columns"] = duplicates;
  report.diagnostics["optimum_unique"] = duplicates.empty();
  return report;
}

WeightReport bma_weights(std::span<const double> log_marginal_liks) {
  if (log_marginal_liks.empty()) throw Error(ErrorCode::InvalidInput, "no log marginal likelihoods");
  for (double v : log_marginal_liks) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw Error(ErrorCode::InvalidInput, "log marginal likelihoods must be finite or -inf");
    }
  }
  return softmax_report(WeightMethod::Bma, log_marginal_liks);
}

WeightReport pseudo_bma_weights(const LogPredictiveMatrix& matrix) {
  const std::vector<double> elpd = column_sums(matrix);
  WeightReport report = softmax_report(WeightMethod::PseudoBma, elpd);
  report.diagnostics["elpd"] = elpd;
  return report;
}

WeightReport pseudo_bma_bb_weights(const LogPredictiveMatrix& matrix, const BayesianBootstrapOptions& opts) {
  if (opts.replicates < 1) throw Error(ErrorCode::InvalidInput, "at least one bootstrap replicate is required");
  const std::size_t n = matrix.n_obs();
  const std::size_t k_models = matrix.n_models();
  const double nd = static_cast<double>(n);
  const CounterRng root(opts.seed);

  std::vector<std::vector<double>> per_replicate(opts.replicates);
  parallel_for(opts.replicates, opts.threads, [&](std::size_t b) {
    std::vector<double> dirichlet(n, 1.0 / nd);
    if (!opts.force_uniform_dirichlet) {
      CounterRng rng = root.substream(b);
      double total = 0.0;
      for (double& d : dirichlet) {
        d = rng.exponential();
        total += d;
      }
      for (double& d : dirichlet) d /= total;
    }
    std::vector<double> elpd(k_models, 0.0);
    for (std::size_t k = 0; k < k_models; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += dirichlet[i] * matrix(i, k);
      elpd[k] = nd * acc;
    }
    per_replicate[b] = softmax(elpd);
  });

  std::vector<double> mean(k_models, 0.0);
  for (const auto& w : per_replicate) {
    for (std::size_t k = 0; k < k_models; ++k) mean[k] += w[k];
  }
  for (double& v : mean) v /= static_cast<double>(opts.replicates);

  WeightReport report = softmax_report(WeightMethod::PseudoBmaBb, column_sums(matrix));
  report.weights = SimplexWeights::normalized(std::move(mean));
  report.diagnostics["replicates"] = opts.replicates;
  report.diagnostics["seed"] = opts.seed;
  return report;
}

SimplexWeights grid_oracle_weights(const LogPredictiveMatrix& matrix, double step) {
  const std::size_t k_models = matrix.n_models();
  if (k_models > 3) throw Error(ErrorCode::TooManyModels, "grid oracle supports at most 3 models");
  if (!(step > 0.0) || step > 0.5) throw Error(ErrorCode::InvalidInput, "grid step must lie in (0, 0.5]");
  if (k_models == 1) return SimplexWeights::vertex(1, 0);

  const ScaledDensities scaled = scale_rows(matrix.values());
  const auto& e = scaled.e;
  const double inv = 1.0 / step;
  const auto cells = static_cast<std::size_t>(std::floor(inv + 1e-9));
  const bool exact = std::abs(inv - std::round(inv)) < 1e-9;
  auto coord = [&](std::size_t a) {
    return exact ? static_cast<double>(a) / static_cast<double>(cells) : static_cast<double>(a) * step;
  };

  const Eigen::Index n = e.rows();
  double best = kNegInf;
  std::vector<double> best_w;
  auto consider = [&](std::vector<double> w) {
    double value = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double dens = 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) dens += w[k] * e(i, static_cast<Eigen::Index>(k));
      value += dens > 0.0 ? std::log(dens) : kNegInf;
    }
    if (best_w.empty() || value > best + 1e-13 * std::max(1.0, std::abs(best))) {
      best = value;
      best_w = std::move(w);
    }
  };

  if (k_models == 2) {
    for (std::size_t a = 0; a <= cells; ++a) {
      const double w0 = coord(a);
      consider({w0, std::max(0.0, 1.0 - w0)});
    }
  } else {
    for (std::size_t a = 0; a <= cells; ++a) {
      for (std::size_t b = 0; a + b <= cells; ++b) {
        const double w0 = coord(a);
        const double w1 = coord(b);
        consider({w0, w1, std::max(0.0, 1.0 - w0 - w1)});
      }
    }
  }
  return SimplexWeights::normalized(std::move(best_w));
}

}  // namespace stackpred
