// mmpfn <subcommand> --config <path> [--out <dir>] [--jobs N]
//
// Exit codes: 0 success, 1 internal or state error, 2 configuration or usage
// error, 3 data or shape error, 4 numeric failure.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mmpfn/config.hpp"
#include "mmpfn/error.hpp"
#include "mmpfn/runner.hpp"

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kNumeric = 4 };

int report(const char* category, const std::exception& e, int code) {
  std::cerr << "mmpfn: " << category << ": " << e.what() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal prior-data fitted network experiments"};
  app.set_version_flag("--version", mmpfn::version_string());
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::size_t jobs = 1;
  bool quiet = false;
  for (const std::string& name : mmpfn::known_commands()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "Experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "Output directory (overrides output_dir)");
    sub->add_option("--jobs", jobs, "Parallel seed jobs")->check(CLI::PositiveNumber);
    sub->add_flag("--quiet", quiet, "No progress messages");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const mmpfn::ExperimentConfig cfg = mmpfn::parse_config(config_path);
    mmpfn::RunOptions options;
    options.out_dir = out_dir;
    options.jobs = jobs;
    options.log = quiet ? nullptr : &std::cerr;
    const auto bundle = mmpfn::run_command(command, cfg, options);
    std::cout << bundle.string() << "\n";
    return kOk;
  } catch (const mmpfn::ConfigError& e) {
    return report("config error", e, kConfig);
  } catch (const mmpfn::DataError& e) {
    return report("data error", e, kData);
  } catch (const mmpfn::ShapeError& e) {
    return report("shape error", e, kData);
  } catch (const mmpfn::NumericError& e) {
    return report("numeric error", e, kNumeric);
  } catch (const std::exception& e) {
    return report("error", e, kInternal);
  }
}
