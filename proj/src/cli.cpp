#include "stackpred/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <iostream>
#include <optional>
#include <sstream>

#include "stackpred/cluster_loo.hpp"
#include "stackpred/distributed_stack.hpp"
#include "stackpred/error.hpp"
#include "stackpred/experiments.hpp"
#include "stackpred/fourier_stack.hpp"
#include "stackpred/io.hpp"
#include "stackpred/json_util.hpp"
#include "stackpred/psis_loo.hpp"
#include "stackpred/weighting.hpp"

namespace stackpred::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
  std::string cube;
  std::string lpd;
  std::string log_ml;
  std::string method = "stacking";
  std::size_t bb_replicates = 1000;
  std::string data;
  std::string structure;
  std::size_t knn = 0;
  std::vector<std::string> models;
  std::vector<std::string> grids;
  std::string heldout;
  std::string weights;
  int multistarts = 10;
  std::string config;
  std::string replay;
  std::string message_log;
  std::string density_out;
  std::string plot_table;
  std::string report;
  std::string kind;
  std::size_t sweep_n = 5000;
  std::uint64_t seed = 0;
  bool has_seed = false;
  int threads = 1;
  std::string out;
  bool strict = false;
};

struct Outcome {
  json config = json::object();
  json payload;
  json diagnostics = json::object();
  std::vector<std::string> warnings;
};

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path sibling(const fs::path& out, std::string_view suffix) {
  fs::path p = out;
  p.replace_extension();
  p += suffix;
  return p;
}

void require(bool condition, const std::string& message) {
  if (!condition) throw Error(ErrorCode::InvalidInput, message);
}

void require_seed(const Options& o, std::string_view what) {
  require(o.has_seed, "--seed is required for " + std::string(what));
}

json read_json_file(const fs::path& path) {
  try {
    return json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidInput, path.string() + " is not valid JSON: " + e.what());
  }
}

std::vector<double> parse_list(const std::string& text, std::string_view what) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    require(!item.empty() && end == item.c_str() + item.size(), "bad " + std::string(what) + " entry '" + item + "'");
    values.push_back(v);
  }
  require(!values.empty(), std::string(what) + " is empty");
  return values;
}

cluster::ConjugateGaussianModel parse_model(const std::string& text) {
  const auto v = parse_list(text, "--model");
  require(v.size() == 3, "--model takes mu0,tau2,sigma2");
  cluster::ConjugateGaussianModel model{v[0], v[1], v[2]};
  model.validate();
  return model;
}

Outcome run_loo(const Options& o) {
  require(!o.cube.empty(), "loo needs --cube");
  const auto cube = io::read_cube(o.cube);
  const auto loo = psis::psis_loo_matrix(cube, o.threads);
  io::write_matrix_csv(o.out, loo.lpd);

  Outcome r;
  r.config = {{"cube", o.cube}, {"out", o.out}, {"threads", o.threads}};
  r.payload = io::khat_diagnostics(loo);
  r.payload["lpd_file"] = fs::path(o.out).filename().string();
  r.diagnostics = {{"n_draws", cube.n_draws()}, {"n_obs", cube.n_obs()}, {"n_models", cube.n_models()}};
  const auto n_high = r.payload["n_high_khat"].get<std::size_t>();
  if (n_high > 0) {
    r.warnings.push_back(std::to_string(n_high) + " cells have khat above 0.7");
  }
  return r;
}

Outcome run_weights(const Options& o) {
  const WeightMethod method = parse_weight_method(o.method);
  Outcome r;
  r.config = {{"method", to_string(method)}, {"out", o.out}};
  WeightReport report;
  if (method == WeightMethod::Bma) {
    require(!o.log_ml.empty(), "bma needs --log-ml (one log marginal likelihood per line)");
    r.config["log_ml"] = o.log_ml;
    report = bma_weights(io::parse_vector_csv(io::read_text(o.log_ml), true));
  } else {
    require(!o.lpd.empty(), std::string(to_string(method)) + " needs --lpd");
    r.config["lpd"] = o.lpd;
    const auto matrix = io::read_matrix_csv(o.lpd);
    switch (method) {
      case WeightMethod::Stacking:
        report = stacking_weights(matrix);
        break;
      case WeightMethod::PseudoBma:
        report = pseudo_bma_weights(matrix);
        break;
      case WeightMethod::PseudoBmaBb: {
        require_seed(o, "pbma-bb");
        require(o.bb_replicates > 0, "--bb-replicates must be positive");
        r.config["seed"] = o.seed;
        r.config["bb_replicates"] = o.bb_replicates;
        r.config["threads"] = o.threads;
        report = pseudo_bma_bb_weights(matrix, {o.bb_replicates, o.seed, o.threads, false});
        break;
      }
      default:
        throw Error(ErrorCode::InvalidInput, "method " + std::string(to_string(method)) + " is not available here");
    }
  }
  if (!report.converged) r.warnings.push_back("optimizer did not converge");
  r.payload = io::weight_report_json(report);
  if (!o.plot_table.empty()) io::write_text(o.plot_table, io::emit_plot_table(r.payload, io::PlotKind::Weights));
  return r;
}

Outcome run_cluster_loo(const Options& o) {
  require(!o.data.empty(), "cluster-loo needs --data");
  require(o.structure.empty() != (o.knn == 0), "cluster-loo needs exactly one of --structure or --knn");
  const auto data = io::parse_vector_csv(io::read_text(o.data));
  const auto structure = o.structure.empty() ? cluster::knn_structure(data, o.knn)
                                             : io::parse_structure_json(io::read_text(o.structure));
  require(structure.size() == data.size(), "structure covers " + std::to_string(structure.size()) +
                                               " observations but the data has " + std::to_string(data.size()));

  std::vector<cluster::ConjugateGaussianAdapter> adapters;
  json models = json::array();
  if (o.models.empty()) {
    adapters.emplace_back(cluster::ConjugateGaussianModel{});
  } else {
    for (const auto& m : o.models) adapters.emplace_back(parse_model(m));
  }
  std::vector<const cluster::ModelAdapter*> ptrs;
  for (const auto& a : adapters) {
    ptrs.push_back(&a);
    models.push_back({{"mu0", a.model().mu0}, {"tau2", a.model().tau2}, {"sigma2", a.model().sigma2}});
  }
  const auto lpd = cluster::cluster_loo_matrix(ptrs, data, structure, o.threads);
  io::write_matrix_csv(o.out, lpd.values());

  Outcome r;
  r.config = {{"data", o.data}, {"out", o.out}, {"models", models}, {"threads", o.threads}};
  if (o.structure.empty()) {
    r.config["knn"] = o.knn;
  } else {
    r.config["structure"] = o.structure;
  }
  std::vector<double> elpd(lpd.n_models(), 0.0);
  for (std::size_t k = 0; k < lpd.n_models(); ++k) elpd[k] = lpd.values().col(static_cast<Eigen::Index>(k)).sum();
  std::vector<std::size_t> sizes;
  for (const auto& b : structure.all()) sizes.push_back(b.size());
  r.payload = {{"lpd_file", fs::path(o.out).filename().string()},
               {"n_obs", lpd.n_obs()},
               {"n_models", lpd.n_models()},
               {"elpd", elpd},
               {"neighborhood_sizes", sizes}};
  return r;
}

Outcome run_fourier(const Options& o) {
  require(!o.grids.empty(), "fourier-stack needs at least one --grid");
  require(o.weights.empty() != o.heldout.empty(), "fourier-stack needs exactly one of --weights or --heldout");
  std::vector<fourier::GridDensity> components;
  for (const auto& g : o.grids) components.push_back(io::parse_grid_csv(io::read_text(g)));

  Outcome r;
  r.config = {{"grids", o.grids}, {"out", o.out}};
  std::optional<WeightReport> fit;
  SimplexWeights w = SimplexWeights::uniform(components.size());
  if (!o.weights.empty()) {
    r.config["weights"] = o.weights;
    w = SimplexWeights(parse_list(o.weights, "--weights"));
  } else {
    require_seed(o, "fitting fourier-stack weights");
    require(o.multistarts > 0, "--multistarts must be positive");
    r.config["heldout"] = o.heldout;
    r.config["seed"] = o.seed;
    r.config["multistarts"] = o.multistarts;
    r.config["threads"] = o.threads;
    fourier::FourierFitOptions opts;
    opts.seed = o.seed;
    opts.multistarts = o.multistarts;
    opts.threads = o.threads;
    fit = fourier::fit_fourier_weights(components, io::parse_vector_csv(io::read_text(o.heldout)), opts);
    w = fit->weights;
    if (!fit->converged) r.warnings.push_back("fourier fit did not converge");
  }
  const auto stacked = fourier::stack_log_cf(components, w);
  if (!o.density_out.empty()) {
    r.config["density_out"] = o.density_out;
    io::write_text(o.density_out, io::format_grid_csv(stacked.density));
  }
  r.payload = {{"weights", w.values()},
               {"clipped_fraction", stacked.clipped_fraction},
               {"band_size", stacked.band_size},
               {"grid", {{"x0", stacked.density.x0()}, {"dx", stacked.density.dx()}, {"n", stacked.density.size()}}}};
  if (fit) r.payload["fit"] = io::weight_report_json(*fit);
  return r;
}

Outcome run_distributed(const Options& o) {
  require(o.config.empty() != o.replay.empty(), "distributed-sim needs exactly one of --config or --replay");
  Outcome r;
  std::vector<distributed::AggregationReport> reports;
  if (!o.replay.empty()) {
    r.config = {{"replay", o.replay}, {"out", o.out}};
    const auto log = io::parse_message_log(io::read_text(o.replay));
    reports = distributed::replay(log);
    r.diagnostics["messages"] = log.messages.size();
  } else {
    require_seed(o, "distributed-sim");
    const auto config = read_json_file(o.config).get<distributed::SimConfig>();
    r.config = {{"config", o.config}, {"sim", config}, {"seed", o.seed}, {"threads", o.threads}, {"out", o.out}};
    distributed::MessageLog log;
    reports = distributed::simulate(config, o.seed, o.threads, &log);
    r.diagnostics["messages"] = log.messages.size();
    if (!o.message_log.empty()) {
      r.config["message_log"] = o.message_log;
      io::write_text(o.message_log, io::format_message_log(log));
    }
  }
  r.payload = json::array();
  for (const auto& report : reports) {
    r.payload.push_back(report);
    if (report.method == distributed::AggregationMethod::Stacking &&
        !report.diagnostics.value("converged", true)) {
      r.warnings.push_back("stacking optimizer did not converge");
    }
  }
  if (!o.plot_table.empty()) io::write_text(o.plot_table, io::emit_plot_table(r.payload, io::PlotKind::Distributed));
  return r;
}

Outcome run_sweep(const Options& o) {
  require_seed(o, "robustness-sweep");
  experiments::SweepOptions opts;
  opts.seed = o.seed;
  opts.n = o.sweep_n;
  opts.n_test = o.sweep_n;
  Outcome r;
  r.config = {{"seed", o.seed}, {"n", o.sweep_n}, {"out", o.out}};
  r.payload = experiments::sweep_report_json(experiments::robustness_sweep(opts), o.seed);
  if (!o.plot_table.empty()) io::write_text(o.plot_table, io::emit_plot_table(r.payload, io::PlotKind::Robustness));
  return r;
}

int run_plot_table(const Options& o) {
  require(!o.report.empty(), "plot-table needs --report");
  const auto kind = io::parse_plot_kind(o.kind);
  json report = read_json_file(o.report);
  if (report.is_object() && report.contains("payload") && report.contains("tool")) report = report["payload"];
  io::write_text(o.out, io::emit_plot_table(report, kind));
  return kExitOk;
}

void write_envelope(const fs::path& path, const std::string& command, const std::string& started, Outcome& r) {
  r.diagnostics["warnings"] = r.warnings;
  const json envelope = {{"tool", kToolName},
                         {"version", kVersion},
                         {"command", command},
                         {"config", r.config},
                         {"started_at", started},
                         {"finished_at", utc_now()},
                         {"payload", r.payload},
                         {"diagnostics", r.diagnostics}};
  io::write_text(path, envelope.dump(2) + "\n");
}

}  // namespace

nlohmann::json without_timestamps(nlohmann::json envelope) {
  envelope.erase("started_at");
  envelope.erase("finished_at");
  return envelope;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Predictive model weighting: PSIS-LOO, stacking, Fourier stacking, distributed aggregation",
               std::string(kToolName)};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  auto add_common = [&](CLI::App* sub, bool with_seed) {
    sub->add_option("--out", o.out, "Output path")->required();
    sub->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--strict", o.strict, "Exit 3 on convergence or diagnostic warnings");
    if (with_seed) sub->add_option("--seed", o.seed, "64-bit random seed");
  };

  auto* loo = app.add_subcommand("loo", "Pointwise PSIS-LOO log predictive densities");
  loo->add_option("--cube", o.cube, "Draw cube (.ndjson or .bin)")->required();
  add_common(loo, false);

  auto* weights = app.add_subcommand("weights", "Model weights from a log predictive matrix");
  weights->add_option("--method", o.method, "stacking|bma|pseudo-bma|pbma-bb");
  weights->add_option("--lpd", o.lpd, "n x K log predictive density CSV");
  weights->add_option("--log-ml", o.log_ml, "Log marginal likelihoods, one per line (bma)");
  weights->add_option("--bb-replicates", o.bb_replicates, "Bayesian bootstrap replicates");
  weights->add_option("--plot-table", o.plot_table, "Also write a long-format plot table");
  add_common(weights, true);

  auto* cluster_loo = app.add_subcommand("cluster-loo", "Leave-one-out under a neighborhood structure");
  cluster_loo->add_option("--data", o.data, "Observations, one per line")->required();
  cluster_loo->add_option("--structure", o.structure, "Neighborhood structure JSON");
  cluster_loo->add_option("--knn", o.knn, "Use the k nearest neighbors instead of --structure");
  cluster_loo->add_option("--model", o.models, "Conjugate Gaussian model mu0,tau2,sigma2 (repeatable)");
  add_common(cluster_loo, false);

  auto* fourier_stack = app.add_subcommand("fourier-stack", "Stack densities through their characteristic functions");
  fourier_stack->add_option("--grid", o.grids, "Component density grid CSV (repeatable)")->required();
  fourier_stack->add_option("--weights", o.weights, "Fixed weights, comma separated");
  fourier_stack->add_option("--heldout", o.heldout, "Held-out points for fitting the weights");
  fourier_stack->add_option("--multistarts", o.multistarts, "Optimizer starts when fitting");
  fourier_stack->add_option("--density-out", o.density_out, "Write the stacked density grid CSV");
  add_common(fourier_stack, true);

  auto* dist = app.add_subcommand("distributed-sim", "Sharded conjugate simulation with aggregation");
  dist->add_option("--config", o.config, "Simulation config JSON");
  dist->add_option("--replay", o.replay, "Rebuild reports from a recorded message log");
  dist->add_option("--message-log", o.message_log, "Write the coordinator/worker message log (NDJSON)");
  dist->add_option("--plot-table", o.plot_table, "Also write a long-format plot table");
  add_common(dist, true);

  auto* sweep = app.add_subcommand("robustness-sweep", "Stacking vs pseudo-BMA with irrelevant candidates added");
  sweep->add_option("--n", o.sweep_n, "Training and test size")->check(CLI::PositiveNumber);
  sweep->add_option("--plot-table", o.plot_table, "Also write a long-format plot table");
  add_common(sweep, true);

  auto* plot = app.add_subcommand("plot-table", "Reshape a report into a long-format CSV");
  plot->add_option("--report", o.report, "Report JSON (envelope or bare payload)")->required();
  plot->add_option("--kind", o.kind, "weights|distributed|robustness")->required();
  plot->add_option("--out", o.out, "Output CSV")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitValidation;
  }
  for (auto* sub : {weights, fourier_stack, dist, sweep}) {
    if (sub->parsed() && sub->get_option("--seed")->count() > 0) o.has_seed = true;
  }

  const std::string started = utc_now();
  try {
    if (plot->parsed()) return run_plot_table(o);

    Outcome result;
    fs::path envelope_path = o.out;
    std::string command;
    if (loo->parsed()) {
      command = "loo";
      result = run_loo(o);
      envelope_path = sibling(o.out, ".khat.json");
    } else if (weights->parsed()) {
      command = "weights";
      result = run_weights(o);
    } else if (cluster_loo->parsed()) {
      command = "cluster-loo";
      result = run_cluster_loo(o);
      envelope_path = sibling(o.out, ".report.json");
    } else if (fourier_stack->parsed()) {
      command = "fourier-stack";
      result = run_fourier(o);
    } else if (dist->parsed()) {
      command = "distributed-sim";
      result = run_distributed(o);
    } else {
      command = "robustness-sweep";
      result = run_sweep(o);
    }
    result.config["strict"] = o.strict;
    write_envelope(envelope_path, command, started, result);
    for (const auto& w : result.warnings) err << "warning: " << w << "\n";
    return o.strict && !result.warnings.empty() ? kExitNumerical : kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return is_numerical(e.code()) ? kExitNumerical : kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace stackpred::cli
