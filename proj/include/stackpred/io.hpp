#ifndef STACKPRED_IO_HPP
#define STACKPRED_IO_HPP

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stackpred/cluster_loo.hpp"
#include "stackpred/distributed_stack.hpp"
#include "stackpred/fourier_stack.hpp"
#include "stackpred/psis_loo.hpp"
#include "stackpred/weighting.hpp"

namespace stackpred::io {

namespace fs = std::filesystem;

/// %.17g, with inf/nan spelled "inf", "-inf", "nan".
std::string format_double(double v);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, std::string_view text);

// Log predictive matrix: header m1,...,mK then one row per observation.
LogPredictiveMatrix parse_matrix_csv(std::string_view text);
LogPredictiveMatrix read_matrix_csv(const fs::path& path);
std::string format_matrix_csv(const Eigen::MatrixXd& values);
void write_matrix_csv(const fs::path& path, const Eigen::MatrixXd& values);

// Draw cube, NDJSON: {"draw": s, "loglik": [[K values] x n]} per line, draws in order.
psis::DrawLogLikCube parse_cube_ndjson(std::string_view text);
std::string format_cube_ndjson(const psis::DrawLogLikCube& cube);
// Draw cube, binary: little-endian uint64 S, n, K then S*n*K float64 in (s, i, k) order.
psis::DrawLogLikCube read_cube_binary(const fs::path& path);
void write_cube_binary(const fs::path& path, const psis::DrawLogLikCube& cube);
/// Dispatches on extension: ".bin" is binary, anything else NDJSON.
psis::DrawLogLikCube read_cube(const fs::path& path);

/// khat diagnostics sidecar for a LOO run.
nlohmann::json khat_diagnostics(const psis::LooMatrix& loo);

// Neighborhood structure: {"n": n, "neighbors": [[...], ...]} with 0-based indices.
cluster::NeighborhoodStructure parse_structure_json(std::string_view text);
std::string format_structure_json(const cluster::NeighborhoodStructure& structure);

// Single-column data vector; an optional non-numeric header line is skipped.
// With allow_neg_inf, "-inf" entries pass (log marginal likelihoods).
std::vector<double> parse_vector_csv(std::string_view text, bool allow_neg_inf = false);
std::string format_vector_csv(const std::vector<double>& values, std::string_view header = "y");

// Grid density: header x,density; spacing uniform within 1e-9 relative.
fourier::GridDensity parse_grid_csv(std::string_view text);
std::string format_grid_csv(const fourier::GridDensity& density);

nlohmann::json weight_report_json(const WeightReport& report);
WeightReport parse_weight_report(const nlohmann::json& j);

distributed::MessageLog parse_message_log(std::string_view text);
std::string format_message_log(const distributed::MessageLog& log);

enum class PlotKind { Weights, Distributed, Robustness };
PlotKind parse_plot_kind(std::string_view name);

/// Long-format CSV (x,series,value) for external plotting. Throws KindMismatch
/// when the payload is not of the requested kind.
std::string emit_plot_table(const nlohmann::json& payload, PlotKind kind);

}  // namespace stackpred::io

#endif  // STACKPRED_IO_HPP
