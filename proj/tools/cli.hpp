#pragma once

// The kvedit command line, as a library so tests can drive it in-process.

#include "kvedit/editing.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace kvedit::cli {

/// Bad flags or an inconsistent configuration; exit status 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string command;

  std::optional<std::string> model_path;
  ToyModelConfig model;

  std::optional<std::string> facts_path;
  std::optional<int> synth;
  std::uint64_t seed = 0;

  std::string method = "neuraldb";
  std::string schedule = "new";  ///< multi-layer: old | new
  double gamma = kDefaultGamma;
  double beta = kDefaultBeta;
  std::vector<int> layers;  ///< empty: the model's default edit layer
  std::string mode = "top1";
  ResidualFitConfig fit;
  int key_prefixes = 1;
  int preserved = 100;  ///< K0 columns; fewer than d_ffn leaves a null space

  std::string out;
  int jobs = 1;
  std::optional<std::string> db;

  std::string prompt;                 ///< query
  std::string op;                     ///< crud: list | add | remove | update
  std::vector<std::uint64_t> ids;     ///< crud remove
  std::vector<std::size_t> sizes;     ///< bench
  std::size_t queries = 200;          ///< bench

  /// Throws UsageError before any work starts.
  void validate() const;
};

/// Resolves the output root: explicit value, then $KVEDIT_OUT, then "kvedit-out".
std::string default_out(const std::optional<std::string>& explicit_out);

/// Parses argv (flags over config file over defaults). Throws UsageError.
RunConfig parse_args(int argc, const char* const* argv);

/// Executes a validated config. Returns 0; throws on failure after removing
/// any outputs it created.
int run(const RunConfig& config, std::ostream& log);

/// Full entry point: parse, run, map errors to exit codes 0 / 1 / 2 and print
/// a single "error: <kind>: <reason>" line on failure.
int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kvedit::cli
