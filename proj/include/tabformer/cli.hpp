#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace tabformer::cli {

/// Process exit codes, one per error category.
enum ExitCode : int {
  kOk = 0,
  kInternalError = 1,
  kUsageError = 2,
  kConfigError = 3,
  kMissingFile = 4,
  kFingerprintMismatch = 5,
  kDataError = 6,
};

struct RunContext {
  nlohmann::json config = nlohmann::json::object();
  std::optional<std::uint64_t> seed;  // --seed, overrides the config value
  std::filesystem::path out;
};

/// Names of the subcommands in pipeline order.
const std::vector<std::string>& command_names();
/// Default config of a subcommand; unknown keys in user configs are rejected
/// against it.
nlohmann::json default_config(const std::string& command);

/// Runs one subcommand; throws on failure. Returns the resolved config.
nlohmann::json run_command(const std::string& command, const RunContext& context);

/// Maps an in-flight exception to its exit code and prints it to stderr.
int report_error(std::exception_ptr error);

/// Full entry point: argument parsing, dispatch, error categorization.
int main(int argc, const char* const* argv);

}  // namespace tabformer::cli
