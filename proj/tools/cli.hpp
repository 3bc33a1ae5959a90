#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "synthdet/dataset.hpp"
#include "synthdet/train.hpp"

namespace synthdet::cli {

enum class Verbosity { Quiet, Normal, Verbose };

/// Options shared by every subcommand. Precedence: flag, then config file,
/// then environment, then built-in default.
struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string data_root;
  std::string output_root;
  bool verbose = false;
  bool quiet = false;
};

/// Global options after resolution against the optional run config.
struct Context {
  std::uint64_t seed = 0;
  std::filesystem::path data_root;
  std::filesystem::path output_root;
  Verbosity verbosity = Verbosity::Normal;
  std::optional<train::RunConfig> run;  // present when --config was given

  data::ImageStore store() const { return data::ImageStore(data_root); }
  /// Relative output paths are taken against the output root.
  std::filesystem::path output(const std::string& path) const;
  /// The run config, or ConfigError naming the subcommand that needs one.
  const train::RunConfig& require_run(const std::string& command) const;
  void info(const std::string& line) const;
  void detail(const std::string& line) const;
};

/// Resolves global options; loads the run config when one was named.
Context resolve(const GlobalOptions& g);

/// Prints "config: <json>" on standard output: the global context merged
/// with the subcommand's own resolved settings.
void print_resolved(const Context& ctx, const std::string& command, nlohmann::ordered_json local);

/// Comma-separated numbers; throws InvalidArgument on anything else.
std::vector<double> parse_grid(const std::string& text);

/// Each family registers its subcommands under `app`; the callback runs the
/// selected leaf with the resolved context.
void add_manifest_commands(CLI::App& app, const GlobalOptions& g);
void add_perturb_commands(CLI::App& app, const GlobalOptions& g);
void add_prompt_commands(CLI::App& app, const GlobalOptions& g);
void add_train_commands(CLI::App& app, const GlobalOptions& g);
void add_eval_commands(CLI::App& app, const GlobalOptions& g);
void add_viz_commands(CLI::App& app, const GlobalOptions& g);

}  // namespace synthdet::cli
