#include "stackpred/fourier_stack.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <string>

#include "stackpred/error.hpp"
#include "stackpred/parallel.hpp"
#include "stackpred/rng.hpp"

namespace stackpred::fourier {

namespace {

using Complex = std::complex<double>;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Unnormalized DFT through cached FFTW plans. Planning is serialized; execution
// through fftw_execute_dft on unaligned plans is thread-safe.
class Fft {
 public:
  // sign = +1: out[m] = sum_j in[j] exp(+2 pi i m j / N); sign = -1 the conjugate kernel.
  static std::vector<Complex> transform(std::vector<Complex> in, int sign) {
    const fftw_plan plan = plan_for(static_cast<int>(in.size()), sign);
    std::vector<Complex> out(in.size());
    fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(in.data()),
                     reinterpret_cast<fftw_complex*>(out.data()));
    return out;
  }

 private:
  static fftw_plan plan_for(int n, int sign) {
    static std::mutex guard;
    static std::map<std::pair<int, int>, fftw_plan> plans;
    std::lock_guard lock(guard);
    auto it = plans.find({n, sign});
    if (it != plans.end()) return it->second;
    std::vector<Complex> a(static_cast<std::size_t>(n));
    std::vector<Complex> b(static_cast<std::size_t>(n));
    const fftw_plan plan = fftw_plan_dft_1d(n, reinterpret_cast<fftw_complex*>(a.data()),
                                            reinterpret_cast<fftw_complex*>(b.data()),
                                            sign > 0 ? FFTW_BACKWARD : FFTW_FORWARD,
                                            FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans.emplace(std::make_pair(n, sign), plan);
    return plan;
  }
};

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

double angular_frequency(std::size_t m, std::size_t n, double dx) {
  const auto signed_m = m < n / 2 ? static_cast<double>(m) : static_cast<double>(m) - static_cast<double>(n);
  return kTwoPi * signed_m / (static_cast<double>(n) * dx);
}

void require_common_grid(std::span<const GridDensity> components) {
  if (components.empty()) throw Error(ErrorCode::InvalidInput, "at least one component density is required");
  for (std::size_t k = 1; k < components.size(); ++k) {
    if (!components[0].same_grid(components[k])) {
      throw Error(ErrorCode::GridMismatch, "component " + std::to_string(k) + " is on a different grid");
    }
  }
}

// Unwraps along `order` starting from phase 0 at t = 0; stops marking valid at
// the first entry below the magnitude floor.
void unwrap_side(const std::vector<Complex>& shifted_cf, const std::vector<std::size_t>& order, LogCF& out) {
  double previous = 0.0;
  bool in_band = true;
  for (std::size_t m : order) {
    const double magnitude = std::abs(shifted_cf[m]);
    const double raw = std::arg(shifted_cf[m]);
    in_band = in_band && magnitude >= kMagnitudeFloor;
    double phase = raw;
    if (in_band) {
      phase = raw + kTwoPi * std::round((previous - raw) / kTwoPi);
      previous = phase;
    }
    out.valid[m] = in_band;
    out.log_values[m] = Complex(magnitude > 0.0 ? std::log(magnitude) : kNegInf, phase);
  }
}

double interpolated_log_score(const GridDensity& density, std::span<const double> points) {
  double total = 0.0;
  for (double x : points) {
    const double f = density.at(x);
    if (!(f > 0.0)) return kNegInf;
    total += std::log(f);
  }
  return total;
}

std::vector<std::vector<std::size_t>> duplicate_components(const std::vector<GridDensity>& components) {
  std::vector<std::vector<std::size_t>> groups;
  std::vector<bool> seen(components.size(), false);
  for (std::size_t a = 0; a < components.size(); ++a) {
    if (seen[a]) continue;
    std::vector<std::size_t> group{a};
    for (std::size_t b = a + 1; b < components.size(); ++b) {
      if (!seen[b] && components[a].values() == components[b].values()) {
        group.push_back(b);
        seen[b] = true;
      }
    }
    if (group.size() > 1) groups.push_back(std::move(group));
  }
  return groups;
}

struct StartResult {
  std::vector<double> weights;
  double objective = kNegInf;
  int iterations = 0;
  bool converged = false;
};

StartResult ascend(const FourierFitProblem& problem, std::vector<double> w, const FourierFitOptions& opts) {
  constexpr double kArmijo = 1e-4;
  StartResult result;
  double value = problem.objective(w);
  double step = 0.0;
  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    result.iterations = iter + 1;
    const std::vector<double> grad = problem.gradient(w, opts.fd_step);
    double grad_scale = 0.0;
    for (double g : grad) grad_scale = std::max(grad_scale, std::abs(g));
    if (grad_scale == 0.0) {
      result.converged = true;
      break;
    }
    if (step == 0.0) step = 0.1 / grad_scale;

    bool accepted = false;
    std::vector<double> candidate;
    double candidate_value = kNegInf;
    double max_change = 0.0;
    for (int backtrack = 0; backtrack < 50; ++backtrack) {
      std::vector<double> trial(w.size());
      for (std::size_t k = 0; k < w.size(); ++k) trial[k] = w[k] + step * grad[k];
      candidate = project_to_simplex(trial, opts.min_weight);
      double predicted = 0.0;
      max_change = 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) {
        predicted += grad[k] * (candidate[k] - w[k]);
        max_change = std::max(max_change, std::abs(candidate[k] - w[k]));
      }
      if (max_change == 0.0) break;
      candidate_value = problem.objective(candidate);
      if (candidate_value >= value + kArmijo * predicted) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // Projected step vanished or no ascent at working precision.
      result.converged = true;
      break;
    }
    const double improvement = candidate_value - value;
    w = std::move(candidate);
    value = candidate_value;
    step *= 2.0;
    if (max_change < 1e-9 || improvement <= 1e-13 * std::max(1.0, std::abs(value))) {
      result.converged = true;
      break;
    }
  }
  result.weights = std::move(w);
  result.objective = value;
  return result;
}

}  // namespace

GridDensity::GridDensity(double x0, double dx, std::vector<double> values, EdgeCheck edges)
    : x0_(x0), dx_(dx), values_(std::move(values)) {
  if (!std::isfinite(x0_) || !std::isfinite(dx_) || !(dx_ > 0.0)) {
    throw Error(ErrorCode::InvalidInput, "grid needs finite x0 and positive spacing");
  }
  if (values_.size() < kMinGridSize || !is_power_of_two(values_.size())) {
    throw Error(ErrorCode::InvalidInput, "grid size " + std::to_string(values_.size()) +
                                             " must be a power of two and at least 64");
  }
  for (double v : values_) {
    if (!std::isfinite(v) || v < 0.0) throw Error(ErrorCode::InvalidInput, "density values must be finite and >= 0");
  }
  const double mass = trapezoid();
  if (std::abs(mass - 1.0) > kNormalizationTolerance) {
    throw Error(ErrorCode::InvalidInput, "density integrates to " + std::to_string(mass) + ", not 1");
  }
  if (edges == EdgeCheck::Require && (values_.front() >= kEdgeTolerance || values_.back() >= kEdgeTolerance)) {
    throw Error(ErrorCode::InvalidInput, "density must decay below 1e-12 at both grid edges");
  }
}

GridDensity GridDensity::sample(double x0, double dx, std::size_t n, const std::function<double(double)>& pdf) {
  std::vector<double> values(n);
  for (std::size_t j = 0; j < n; ++j) values[j] = pdf(x0 + static_cast<double>(j) * dx);
  double mass = 0.0;
  for (double v : values) mass += v;
  mass = dx * (mass - 0.5 * (values.front() + values.back()));
  if (!(mass > 0.0)) throw Error(ErrorCode::InvalidInput, "sampled density has no mass on the grid");
  for (double& v : values) v /= mass;
  return GridDensity(x0, dx, std::move(values));
}

double GridDensity::trapezoid() const {
  double sum = 0.0;
  for (double v : values_) sum += v;
  return dx_ * (sum - 0.5 * (values_.front() + values_.back()));
}

double GridDensity::at(double x) const {
  const double pos = (x - x0_) / dx_;
  if (!(pos >= 0.0) || pos > static_cast<double>(values_.size() - 1)) return 0.0;
  const auto j = static_cast<std::size_t>(std::floor(pos));
  if (j + 1 >= values_.size()) return values_.back();
  const double frac = pos - static_cast<double>(j);
  return values_[j] + frac * (values_[j + 1] - values_[j]);
}

bool GridDensity::same_grid(const GridDensity& other) const {
  const double scale = std::max(std::abs(x0_), dx_);
  return size() == other.size() && std::abs(dx_ - other.dx_) <= 1e-12 * dx_ &&
         std::abs(x0_ - other.x0_) <= 1e-12 * scale;
}

LogCF density_to_log_cf(const GridDensity& density) {
  const std::size_t n = density.size();
  const double dx = density.dx();
  const auto& values = density.values();

  std::vector<Complex> input(n);
  double mass = 0.0;
  double first_moment = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    input[j] = values[j];
    mass += values[j];
    first_moment += values[j] * density.x(j);
  }
  const double mean = first_moment / mass;
  const std::vector<Complex> transform = Fft::transform(std::move(input), +1);

  // Normalize so cf(0) = 1 and move the phase reference from x0 to the mean,
  // which keeps consecutive phase increments small for unwrapping.
  LogCF out;
  out.freqs.resize(n);
  out.log_values.resize(n);
  out.valid.assign(n, false);
  std::vector<Complex> shifted(n);
  for (std::size_t m = 0; m < n; ++m) {
    const double t = angular_frequency(m, n, dx);
    out.freqs[m] = t;
    shifted[m] = transform[m] / transform[0].real() * std::polar(1.0, t * (density.x0() - mean));
  }
  shifted[0] = 1.0;
  out.valid[0] = true;
  out.log_values[0] = 0.0;

  std::vector<std::size_t> positive;
  std::vector<std::size_t> negative;
  for (std::size_t m = 1; m < n / 2; ++m) positive.push_back(m);
  for (std::size_t m = n - 1; m >= n / 2; --m) negative.push_back(m);
  unwrap_side(shifted, positive, out);
  unwrap_side(shifted, negative, out);

  for (std::size_t m = 0; m < n; ++m) out.log_values[m] += Complex(0.0, out.freqs[m] * mean);
  return out;
}

LogCfStacker::LogCfStacker(std::vector<GridDensity> components) : components_(std::move(components)) {
  require_common_grid(components_);
  log_cfs_.reserve(components_.size());
  for (const auto& c : components_) log_cfs_.push_back(density_to_log_cf(c));
}

StackResult LogCfStacker::stack(std::span<const double> weights, const StackOptions* opts) const {
  if (weights.size() != components_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "expected " + std::to_string(components_.size()) + " weights");
  }
  const GridDensity& grid = components_.front();
  const std::size_t n = grid.size();
  const double dx = grid.dx();

  std::vector<Complex> spectrum(n, Complex(0.0, 0.0));
  std::size_t band = 0;
  for (std::size_t m = 0; m < n; ++m) {
    bool in_band = true;
    Complex sum(0.0, 0.0);
    for (std::size_t k = 0; k < components_.size(); ++k) {
      if (!(weights[k] > 0.0)) continue;
      if (!log_cfs_[k].valid[m]) {
        in_band = false;
        break;
      }
      sum += weights[k] * log_cfs_[k].log_values[m];
    }
    if (!in_band) continue;
    ++band;
    // Back to the x0-referenced transform before inverting.
    spectrum[m] = std::exp(sum) * std::polar(1.0, -log_cfs_[0].freqs[m] * grid.x0());
  }
  if (band <= 1) throw Error(ErrorCode::AllInvalid, "no common valid frequency band beyond t = 0");

  const std::vector<Complex> inverse = Fft::transform(std::move(spectrum), -1);
  const double scale = 1.0 / (static_cast<double>(n) * dx);
  std::vector<double> values(n);
  double negative = 0.0;
  double positive = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double v = inverse[j].real() * scale;
    if (v < 0.0) {
      negative -= v;
      values[j] = 0.0;
    } else {
      positive += v;
      values[j] = v;
    }
  }
  const double clipped = positive > 0.0 ? negative / positive : 1.0;
  if (opts != nullptr && clipped > opts->max_clipped_fraction) {
    throw Error(ErrorCode::ExcessiveClipping, "clipped negative mass fraction " + std::to_string(clipped) +
                                                  " exceeds " + std::to_string(opts->max_clipped_fraction));
  }
  double mass = 0.0;
  for (double v : values) mass += v;
  mass = dx * (mass - 0.5 * (values.front() + values.back()));
  if (!(mass > 0.0)) throw Error(ErrorCode::AllInvalid, "stacked density has no positive mass");
  for (double& v : values) v /= mass;
  return {GridDensity(grid.x0(), dx, std::move(values), EdgeCheck::Skip), clipped, band};
}

StackResult stack_log_cf(std::span<const GridDensity> components, const SimplexWeights& w,
                         const StackOptions& opts) {
  require_common_grid(components);
  if (w.size() != components.size()) {
    throw Error(ErrorCode::DimensionMismatch, "expected " + std::to_string(components.size()) + " weights");
  }
  const LogCfStacker stacker(std::vector<GridDensity>(components.begin(), components.end()));
  return stacker.stack(w.values(), &opts);
}

GridDensity linear_mixture(std::span<const GridDensity> components, const SimplexWeights& w) {
  require_common_grid(components);
  if (w.size() != components.size()) {
    throw Error(ErrorCode::DimensionMismatch, "expected " + std::to_string(components.size()) + " weights");
  }
  const std::size_t n = components.front().size();
  std::vector<double> values(n, 0.0);
  for (std::size_t k = 0; k < components.size(); ++k) {
    if (w[k] == 0.0) continue;
    const auto& v = components[k].values();
    for (std::size_t j = 0; j < n; ++j) values[j] += w[k] * v[j];
  }
  // Constructor re-verifies unit mass.
  return GridDensity(components.front().x0(), components.front().dx(), std::move(values), EdgeCheck::Skip);
}

FourierFitProblem::FourierFitProblem(std::vector<GridDensity> components, std::vector<double> heldout)
    : stacker_(std::move(components)), heldout_(std::move(heldout)) {
  if (heldout_.empty()) throw Error(ErrorCode::InvalidInput, "at least one held-out point is required");
  const GridDensity& grid = stacker_.components().front();
  for (double x : heldout_) {
    if (!(x >= grid.x0() && x <= grid.x_max())) {
      throw Error(ErrorCode::InvalidInput, "held-out point " + std::to_string(x) + " lies outside the grid");
    }
  }
}

double FourierFitProblem::objective(std::span<const double> w) const {
  return interpolated_log_score(stacker_.stack(w).density, heldout_);
}

std::vector<double> FourierFitProblem::gradient(std::span<const double> w, double step) const {
  std::vector<double> grad(w.size());
  std::vector<double> probe(w.begin(), w.end());
  for (std::size_t k = 0; k < w.size(); ++k) {
    probe[k] = w[k] + step;
    const double up = objective(probe);
    probe[k] = w[k] - step;
    const double down = objective(probe);
    probe[k] = w[k];
    grad[k] = (up - down) / (2.0 * step);
  }
  return grad;
}

std::vector<double> project_to_simplex(std::span<const double> v, double floor) {
  const std::size_t k = v.size();
  const double radius = 1.0 - static_cast<double>(k) * floor;
  if (k == 0 || radius <= 0.0) throw Error(ErrorCode::InvalidInput, "weight floor leaves no feasible simplex");
  std::vector<double> shifted(k);
  for (std::size_t i = 0; i < k; ++i) shifted[i] = v[i] - floor;
  std::vector<double> sorted = shifted;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    cumulative += sorted[i];
    const double candidate = (cumulative - radius) / static_cast<double>(i + 1);
    if (sorted[i] - candidate > 0.0) theta = candidate;
  }
  std::vector<double> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = std::max(shifted[i] - theta, 0.0) + floor;
  return out;
}

WeightReport fit_fourier_weights(std::vector<GridDensity> components, std::vector<double> heldout,
                                 const FourierFitOptions& opts) {
  if (opts.multistarts < 1) throw Error(ErrorCode::InvalidInput, "at least one start is required");
  const auto duplicates = duplicate_components(components);
  const FourierFitProblem problem(std::move(components), std::move(heldout));
  const std::size_t k_models = problem.size();

  WeightReport report;
  report.method = WeightMethod::FourierStacking;
  if (k_models == 1) {
    report.weights = SimplexWeights::vertex(1, 0);
    report.objective = problem.objective(report.weights.values());
    report.diagnostics["clipped_fraction"] = problem.stacker().stack(report.weights.values()).clipped_fraction;
    return report;
  }

  const CounterRng root(opts.seed);
  const auto starts = static_cast<std::size_t>(opts.multistarts);
  std::vector<StartResult> results(starts);
  parallel_for(starts, opts.threads, [&](std::size_t s) {
    std::vector<double> w0(k_models, 1.0 / static_cast<double>(k_models));
    if (s > 0) {
      CounterRng rng = root.substream(s);
      double total = 0.0;
      for (double& v : w0) {
        v = rng.exponential();
        total += v;
      }
      for (double& v : w0) v /= total;
    }
    results[s] = ascend(problem, project_to_simplex(w0, opts.min_weight), opts);
  });

  std::size_t best = 0;
  for (std::size_t s = 1; s < starts; ++s) {
    if (results[s].objective > results[best].objective) best = s;
  }
  std::vector<double> objectives;
  double lowest = results[0].objective;
  for (const auto& r : results) {
    objectives.push_back(r.objective);
    lowest = std::min(lowest, r.objective);
  }
  const StartResult& winner = results[best];
  double spread = 0.0;
  for (const auto& r : results) {
    for (std::size_t k = 0; k < k_models; ++k) spread = std::max(spread, std::abs(r.weights[k] - winner.weights[k]));
  }
  // Starts that tie on the objective yet stop at different weights.
  const bool flat =
      spread > 1e-3 && (winner.objective - lowest) <= 1e-9 * std::max(1.0, std::abs(winner.objective));
  const StackResult stacked = problem.stacker().stack(winner.weights);

  report.weights = SimplexWeights::normalized(winner.weights);
  report.objective = winner.objective;
  report.iterations = winner.iterations;
  report.converged = winner.converged;
  report.diagnostics["best_start"] = best;
  report.diagnostics["start_objectives"] = objectives;
  report.diagnostics["clipped_fraction"] = stacked.clipped_fraction;
  report.diagnostics["clipping_exceeded"] = stacked.clipped_fraction > opts.stack.max_clipped_fraction;
  report.diagnostics["duplicate_components"] = duplicates;
  report.diagnostics["multiplicity"] = !duplicates.empty() || flat;
  return report;
}

}  // namespace stackpred::fourier
