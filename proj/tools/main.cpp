#include <cstdio>
#include <exception>
#include <iostream>
#include <sstream>

#include <torch/torch.h>

#include "cli.hpp"
#include "synthdet/error.hpp"
#include "synthdet/imgproc.hpp"

namespace synthdet::cli {

std::filesystem::path Context::output(const std::string& path) const {
  const std::filesystem::path p(path);
  return p.is_absolute() ? p : output_root / p;
}

const train::RunConfig& Context::require_run(const std::string& command) const {
  if (!run) fail(ErrorCode::ConfigError, command + " needs --config");
  return *run;
}

void Context::info(const std::string& line) const {
  if (verbosity != Verbosity::Quiet) std::cerr << line << '\n';
}

void Context::detail(const std::string& line) const {
  if (verbosity == Verbosity::Verbose) std::cerr << line << '\n';
}

Context resolve(const GlobalOptions& g) {
  if (g.verbose && g.quiet) fail(ErrorCode::ConfigError, "--verbose and --quiet are exclusive");
  Context ctx;
  ctx.verbosity = g.quiet ? Verbosity::Quiet : g.verbose ? Verbosity::Verbose : Verbosity::Normal;
  if (!g.config_path.empty()) ctx.run = train::RunConfig::load(g.config_path, g.seed);
  ctx.seed = g.seed ? *g.seed : ctx.run ? ctx.run->seed : 0;

  if (!g.data_root.empty()) ctx.data_root = g.data_root;
  else if (ctx.run && !ctx.run->data_root.empty()) ctx.data_root = ctx.run->data_root;
  else ctx.data_root = data::ImageStore::default_root();

  ctx.output_root = g.output_root.empty() ? std::filesystem::path(".") : std::filesystem::path(g.output_root);
  std::error_code ec;
  std::filesystem::create_directories(ctx.output_root, ec);
  if (ec || !std::filesystem::is_directory(ctx.output_root))
    fail(ErrorCode::ConfigError, "output root " + ctx.output_root.string() + " cannot be created");
  if (!std::filesystem::is_directory(ctx.data_root))
    fail(ErrorCode::ConfigError, "data root " + ctx.data_root.string() + " is not a directory");
  return ctx;
}

void print_resolved(const Context& ctx, const std::string& command, nlohmann::ordered_json local) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["seed"] = ctx.seed;
  j["data_root"] = ctx.data_root.string();
  j["output_root"] = ctx.output_root.string();
  j["codecs"] = imgproc::codec_versions();
  j["device"] = "cpu";
  j["verbosity"] = ctx.verbosity == Verbosity::Quiet     ? "quiet"
                   : ctx.verbosity == Verbosity::Verbose ? "verbose"
                                                         : "normal";
  j["options"] = std::move(local);
  if (ctx.run) j["run"] = ctx.run->resolved;
  std::cout << "config: " << j.dump() << std::endl;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
    if (item.empty() || used != item.size())
      fail(ErrorCode::InvalidArgument, "grid entry '" + item + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) fail(ErrorCode::InvalidArgument, "grid is empty");
  return out;
}

namespace {

void report_error(std::string_view code, const std::string& message) {
  std::string flat = message;
  for (auto& c : flat)
    if (c == '\n') c = ' ';
  std::cerr << "error: code=" << code << " message=" << flat << std::endl;
}

}  // namespace

}  // namespace synthdet::cli

int main(int argc, char** argv) {
  using namespace synthdet;
  torch::set_num_threads(1);

  CLI::App app{"synthdet: dataset assembly, training and evaluation for synthetic-image detection"};
  app.require_subcommand(1);
  app.fallthrough();
  cli::GlobalOptions g;
  app.add_option("--seed", g.seed, "Seed; overrides the config file everywhere");
  app.add_option("--config", g.config_path, "Run configuration (JSON)");
  app.add_option("--data-root", g.data_root,
                 "Root for relative image paths (default: $SYNTHDET_DATA_ROOT, else the working directory)");
  app.add_option("--output-root", g.output_root, "Base for relative output paths (default: .)");
  app.add_flag("-v,--verbose", g.verbose, "Per-item progress on standard error");
  app.add_flag("-q,--quiet", g.quiet, "No progress output");

  cli::add_manifest_commands(app, g);
  cli::add_perturb_commands(app, g);
  cli::add_prompt_commands(app, g);
  cli::add_train_commands(app, g);
  cli::add_eval_commands(app, g);
  cli::add_viz_commands(app, g);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    // A missing or unrecognized subcommand is an unknown command; anything
    // else is a malformed option.
    const bool missing = dynamic_cast<const CLI::RequiredError*>(&e) != nullptr &&
                         std::string(e.what()).find("subcommand") != std::string::npos;
    const bool unknown = missing || dynamic_cast<const CLI::ExtrasError*>(&e) != nullptr;
    std::string message = e.what();
    if (missing && !app.remaining().empty()) message = "unknown command '" + app.remaining().front() + "'";
    cli::report_error(unknown ? "UnknownCommand" : "ConfigError", message);
    return 2;
  } catch (const Error& e) {
    cli::report_error(to_string(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    cli::report_error("Internal", e.what());
    return 1;
  }
  return 0;
}
