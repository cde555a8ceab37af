#ifndef STACKPRED_CLI_HPP
#define STACKPRED_CLI_HPP

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace stackpred::cli {

inline constexpr std::string_view kToolName = "stackpred";
inline constexpr std::string_view kVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

/// Runs one command line. `args` excludes the program name. Usage and input
/// errors exit 2, numerical failures (and warnings under --strict) exit 3.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

/// Report envelope with the timestamp fields removed, for rerun comparisons.
nlohmann::json without_timestamps(nlohmann::json envelope);

}  // namespace stackpred::cli

#endif  // STACKPRED_CLI_HPP
