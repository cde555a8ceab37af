#include "stackpred/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "stackpred/error.hpp"
#include "stackpred/json_util.hpp"

namespace stackpred::io {

namespace {

static_assert(std::endian::native == std::endian::little, "binary cube I/O assumes a little-endian host");

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) {
    const auto first = field.find_first_not_of(" \t");
    const auto last = field.find_last_not_of(" \t");
    fields.push_back(first == std::string::npos ? std::string() : field.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

bool try_parse_double(const std::string& field, double& out) {
  if (field.empty()) return false;
  char* end = nullptr;
  out = std::strtod(field.c_str(), &end);
  return end == field.c_str() + field.size();
}

double parse_double(const std::string& field, std::size_t line_no) {
  double v = 0.0;
  if (!try_parse_double(field, v)) {
    throw Error(ErrorCode::InvalidInput, "line " + std::to_string(line_no) + ": '" + field + "' is not a number");
  }
  return v;
}

nlohmann::json parse_json(std::string_view text, std::string_view what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidInput, std::string(what) + " is not valid JSON: " + e.what());
  }
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

LogPredictiveMatrix parse_matrix_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.size() < 2) throw Error(ErrorCode::InvalidInput, "matrix CSV needs a header and at least one row");
  const auto header = split_fields(lines[0]);
  double probe = 0.0;
  for (const auto& name : header) {
    if (name.empty() || try_parse_double(name, probe)) {
      throw Error(ErrorCode::InvalidInput, "matrix CSV header must name every column (m1,...,mK)");
    }
  }
  const auto k = static_cast<Eigen::Index>(header.size());
  Eigen::MatrixXd values(static_cast<Eigen::Index>(lines.size() - 1), k);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = split_fields(lines[r]);
    if (static_cast<Eigen::Index>(fields.size()) != k) {
      throw Error(ErrorCode::DimensionMismatch, "line " + std::to_string(r + 1) + " has " +
                                                    std::to_string(fields.size()) + " fields, expected " +
                                                    std::to_string(k));
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      values(static_cast<Eigen::Index>(r - 1), c) = parse_double(fields[static_cast<std::size_t>(c)], r + 1);
    }
  }
  return LogPredictiveMatrix(std::move(values));
}

LogPredictiveMatrix read_matrix_csv(const fs::path& path) { return parse_matrix_csv(read_text(path)); }

std::string format_matrix_csv(const Eigen::MatrixXd& values) {
  std::string out;
  for (Eigen::Index k = 0; k < values.cols(); ++k) {
    if (k > 0) out += ',';
    out += "m" + std::to_string(k + 1);
  }
  out += '\n';
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index k = 0; k < values.cols(); ++k) {
      if (k > 0) out += ',';
      out += format_double(values(i, k));
    }
    out += '\n';
  }
  return out;
}

void write_matrix_csv(const fs::path& path, const Eigen::MatrixXd& values) {
  write_text(path, format_matrix_csv(values));
}

psis::DrawLogLikCube parse_cube_ndjson(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw Error(ErrorCode::InvalidInput, "cube file has no draws");
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<double> values;
  for (std::size_t s = 0; s < lines.size(); ++s) {
    const nlohmann::json record = parse_json(lines[s], "cube record " + std::to_string(s));
    if (!record.contains("draw") || !record.contains("loglik") || !record["loglik"].is_array()) {
      throw Error(ErrorCode::InvalidInput, "cube record " + std::to_string(s) + " needs 'draw' and 'loglik'");
    }
    if (record["draw"].get<std::size_t>() != s) {
      throw Error(ErrorCode::InvalidInput, "cube records must be in draw order; expected draw " + std::to_string(s));
    }
    const auto& rows = record["loglik"];
    if (s == 0) {
      n = rows.size();
      k = n > 0 && rows[0].is_array() ? rows[0].size() : 0;
      values.reserve(lines.size() * n * k);
    }
    if (rows.size() != n) throw Error(ErrorCode::InvalidInput, "draw " + std::to_string(s) + " has a different n");
    for (const auto& row : rows) {
      if (!row.is_array() || row.size() != k) {
        throw Error(ErrorCode::InvalidInput, "draw " + std::to_string(s) + " has a ragged loglik row");
      }
      for (const auto& v : row) values.push_back(read_number(v));
    }
  }
  return psis::DrawLogLikCube(lines.size(), n, k, std::move(values));
}

std::string format_cube_ndjson(const psis::DrawLogLikCube& cube) {
  std::string out;
  for (std::size_t s = 0; s < cube.n_draws(); ++s) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < cube.n_obs(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t k = 0; k < cube.n_models(); ++k) row.push_back(cube(s, i, k));
      rows.push_back(std::move(row));
    }
    out += nlohmann::json{{"draw", s}, {"loglik", rows}}.dump();
    out += '\n';
  }
  return out;
}

psis::DrawLogLikCube read_cube_binary(const fs::path& path) {
  const std::string bytes = read_text(path);
  if (bytes.size() < 3 * sizeof(std::uint64_t)) throw Error(ErrorCode::InvalidInput, "binary cube header is truncated");
  std::uint64_t header[3];
  std::memcpy(header, bytes.data(), sizeof header);
  const std::uint64_t count = header[0] * header[1] * header[2];
  if (header[1] != 0 && header[2] != 0 && count / header[2] / header[1] != header[0]) {
    throw Error(ErrorCode::InvalidInput, "binary cube dimensions overflow");
  }
  if (bytes.size() != sizeof header + count * sizeof(double)) {
    throw Error(ErrorCode::InvalidInput, "binary cube size does not match its S, n, K header");
  }
  std::vector<double> values(count);
  std::memcpy(values.data(), bytes.data() + sizeof header, count * sizeof(double));
  return psis::DrawLogLikCube(header[0], header[1], header[2], std::move(values));
}

void write_cube_binary(const fs::path& path, const psis::DrawLogLikCube& cube) {
  const std::uint64_t header[3] = {cube.n_draws(), cube.n_obs(), cube.n_models()};
  std::string bytes(sizeof header + cube.values().size() * sizeof(double), '\0');
  std::memcpy(bytes.data(), header, sizeof header);
  std::memcpy(bytes.data() + sizeof header, cube.values().data(), cube.values().size() * sizeof(double));
  write_text(path, bytes);
}

psis::DrawLogLikCube read_cube(const fs::path& path) {
  if (path.extension() == ".bin") return read_cube_binary(path);
  return parse_cube_ndjson(read_text(path));
}

nlohmann::json khat_diagnostics(const psis::LooMatrix& loo) {
  nlohmann::json khat = nlohmann::json::array();
  nlohmann::json degenerate = nlohmann::json::array();
  nlohmann::json high = nlohmann::json::array();
  std::size_t n_high = 0;
  double max_khat = psis::kKhatSentinel;
  for (Eigen::Index i = 0; i < loo.lpd.rows(); ++i) {
    nlohmann::json krow = nlohmann::json::array();
    nlohmann::json drow = nlohmann::json::array();
    nlohmann::json hrow = nlohmann::json::array();
    for (Eigen::Index k = 0; k < loo.lpd.cols(); ++k) {
      krow.push_back(json_number(loo.khat(i, k)));
      drow.push_back(static_cast<bool>(loo.degenerate(i, k)));
      hrow.push_back(static_cast<bool>(loo.high_khat(i, k)));
      if (loo.high_khat(i, k)) ++n_high;
      if (!loo.degenerate(i, k)) max_khat = std::max(max_khat, loo.khat(i, k));
    }
    khat.push_back(std::move(krow));
    degenerate.push_back(std::move(drow));
    high.push_back(std::move(hrow));
  }
  return {{"khat", khat},
          {"degenerate", degenerate},
          {"high_khat", high},
          {"khat_threshold", psis::kKhatWarning},
          {"khat_sentinel", psis::kKhatSentinel},
          {"max_khat", json_number(max_khat)},
          {"n_high_khat", n_high}};
}

cluster::NeighborhoodStructure parse_structure_json(std::string_view text) {
  const nlohmann::json j = parse_json(text, "neighborhood structure");
  try {
    return cluster::NeighborhoodStructure(j.at("n").get<std::size_t>(),
                                          j.at("neighbors").get<std::vector<std::vector<std::size_t>>>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidInput, std::string("malformed neighborhood structure: ") + e.what());
  }
}

std::string format_structure_json(const cluster::NeighborhoodStructure& structure) {
  return nlohmann::json{{"n", structure.size()}, {"neighbors", structure.all()}}.dump() + "\n";
}

std::vector<double> parse_vector_csv(std::string_view text, bool allow_neg_inf) {
  const auto lines = split_lines(text);
  std::vector<double> values;
  for (std::size_t r = 0; r < lines.size(); ++r) {
    const auto fields = split_fields(lines[r]);
    if (fields.size() != 1) {
      throw Error(ErrorCode::InvalidInput, "line " + std::to_string(r + 1) + ": expected a single column");
    }
    double v = 0.0;
    if (!try_parse_double(fields[0], v)) {
      if (r == 0) continue;  // header
      throw Error(ErrorCode::InvalidInput, "line " + std::to_string(r + 1) + ": '" + fields[0] + "' is not a number");
    }
    const bool neg_inf_ok = allow_neg_inf && v == -std::numeric_limits<double>::infinity();
    if (!std::isfinite(v) && !neg_inf_ok) {
      throw Error(ErrorCode::InvalidInput, "line " + std::to_string(r + 1) + ": non-finite value");
    }
    values.push_back(v);
  }
  if (values.empty()) throw Error(ErrorCode::InvalidInput, "data file holds no values");
  return values;
}

std::string format_vector_csv(const std::vector<double>& values, std::string_view header) {
  std::string out(header);
  out += '\n';
  for (double v : values) {
    out += format_double(v);
    out += '\n';
  }
  return out;
}

fourier::GridDensity parse_grid_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || split_fields(lines[0]) != std::vector<std::string>{"x", "density"}) {
    throw Error(ErrorCode::InvalidInput, "grid CSV must start with the header x,density");
  }
  std::vector<double> xs;
  std::vector<double> values;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = split_fields(lines[r]);
    if (fields.size() != 2) throw Error(ErrorCode::InvalidInput, "line " + std::to_string(r + 1) + ": expected x,density");
    xs.push_back(parse_double(fields[0], r + 1));
    values.push_back(parse_double(fields[1], r + 1));
  }
  if (xs.size() < 2) throw Error(ErrorCode::InvalidInput, "grid needs at least two points");
  const double dx = (xs.back() - xs.front()) / static_cast<double>(xs.size() - 1);
  for (std::size_t j = 1; j < xs.size(); ++j) {
    if (std::abs((xs[j] - xs[j - 1]) - dx) > 1e-9 * std::abs(dx)) {
      throw Error(ErrorCode::InvalidInput, "grid spacing is not uniform at line " + std::to_string(j + 2));
    }
  }
  return fourier::GridDensity(xs.front(), dx, std::move(values));
}

std::string format_grid_csv(const fourier::GridDensity& density) {
  std::string out = "x,density\n";
  for (std::size_t j = 0; j < density.size(); ++j) {
    out += format_double(density.x(j));
    out += ',';
    out += format_double(density.values()[j]);
    out += '\n';
  }
  return out;
}

nlohmann::json weight_report_json(const WeightReport& report) {
  return {{"method", to_string(report.method)},
          {"weights", report.weights.values()},
          {"objective", json_number(report.objective)},
          {"iterations", report.iterations},
          {"converged", report.converged},
          {"diagnostics", report.diagnostics}};
}

WeightReport parse_weight_report(const nlohmann::json& j) {
  try {
    WeightReport report;
    report.method = parse_weight_method(j.at("method").get<std::string>());
    report.weights = SimplexWeights(j.at("weights").get<std::vector<double>>());
    report.objective = read_number(j.at("objective"));
    report.iterations = j.at("iterations").get<int>();
    report.converged = j.at("converged").get<bool>();
    report.diagnostics = j.value("diagnostics", nlohmann::json::object());
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidInput, std::string("malformed weight report: ") + e.what());
  }
}

distributed::MessageLog parse_message_log(std::string_view text) {
  distributed::MessageLog log;
  const auto lines = split_lines(text);
  for (std::size_t r = 0; r < lines.size(); ++r) {
    nlohmann::json message = parse_json(lines[r], "message " + std::to_string(r + 1));
    if (!message.is_object() || !message.contains("type")) {
      throw Error(ErrorCode::InvalidInput, "message " + std::to_string(r + 1) + " has no type tag");
    }
    log.messages.push_back(std::move(message));
  }
  return log;
}

std::string format_message_log(const distributed::MessageLog& log) {
  std::string out;
  for (const auto& m : log.messages) {
    out += m.dump();
    out += '\n';
  }
  return out;
}

PlotKind parse_plot_kind(std::string_view name) {
  if (name == "weights") return PlotKind::Weights;
  if (name == "distributed") return PlotKind::Distributed;
  if (name == "robustness") return PlotKind::Robustness;
  throw Error(ErrorCode::InvalidInput, "unknown plot table kind '" + std::string(name) + "'");
}

std::string emit_plot_table(const nlohmann::json& payload, PlotKind kind) {
  std::string out = "x,series,value\n";
  auto row = [&out](const std::string& x, const std::string& series, double value) {
    out += x + "," + series + "," + format_double(value) + "\n";
  };
  switch (kind) {
    case PlotKind::Weights: {
      if (!payload.is_object() || !payload.contains("weights") || !payload.contains("method")) {
        throw Error(ErrorCode::KindMismatch, "payload is not a weight report");
      }
      const auto method = payload["method"].get<std::string>();
      const auto& w = payload["weights"];
      for (std::size_t k = 0; k < w.size(); ++k) row("m" + std::to_string(k + 1), method, w[k].get<double>());
      break;
    }
    case PlotKind::Distributed: {
      if (!payload.is_array()) throw Error(ErrorCode::KindMismatch, "payload is not a distributed report array");
      for (const auto& r : payload) {
        if (!r.is_object() || !r.contains("M") || !r.contains("test_log_score")) {
          throw Error(ErrorCode::KindMismatch, "payload is not a distributed report array");
        }
        row(std::to_string(r["M"].get<std::size_t>()), r["method"].get<std::string>(), read_number(r["test_log_score"]));
      }
      break;
    }
    case PlotKind::Robustness: {
      if (!payload.is_object() || payload.value("kind", "") != "robustness_sweep") {
        throw Error(ErrorCode::KindMismatch, "payload is not a robustness sweep report");
      }
      for (const auto& r : payload.at("rows")) {
        row(std::to_string(r.at("num_bad_models").get<std::size_t>()), r.at("method").get<std::string>(),
            read_number(r.at("test_log_score")));
      }
      break;
    }
  }
  return out;
}

}  // namespace stackpred::io
