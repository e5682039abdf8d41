#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "mmpfn/config.hpp"

namespace mmpfn {

struct RunOptions {
  std::filesystem::path out_dir;  // empty: the config's output_dir
  std::size_t jobs = 1;
  std::ostream* log = nullptr;  // progress messages; never part of any output file
};

// pretrain, finetune, eval, imbalance-sweep, mc-attention, similarity
const std::vector<std::string>& known_commands();

// Validates the config for the command, runs it and writes
// <out>/<command>.json plus the command's CSV and checkpoint files. The
// bundle holds the canonical config, an environment fingerprint and the
// results; rerunning with the same config and seeds rewrites identical bytes
// for any `jobs`. Returns the bundle path.
std::filesystem::path run_command(const std::string& command, const ExperimentConfig& cfg,
                                  const RunOptions& options = {});

// Library version baked in at build time.
const char* version_string();

}  // namespace mmpfn
