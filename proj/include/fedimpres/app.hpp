#pragma once

#include "fedimpres/config.hpp"

#include <string>
#include <vector>

namespace fedimpres {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

// Runs a full experiment and writes into cfg.out:
//   config.txt, <run_id>_<alg>.csv, <run_id>_<alg>.json, <run_id>_<alg>_model.bin
//   and <run_id>_<alg>_forgetting.csv when track_cross is set.
ExperimentResult run_configured(const ExperimentConfig& cfg);

// Subcommands run | partition | synthesize | eval. Returns the exit code.
int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args); // args exclude the program name

} // namespace fedimpres
