#pragma once

#include <cstdint>
#include <string>

#include "finr/config.hpp"

namespace finr {

// Resolved command-line options shared by every subcommand.
struct RunOptions {
  std::string out_dir;
  bool seed_set = false;  // --seed was given and overrides [train] seed
  std::uint64_t seed = 0;
  int threads = 0;  // echoed into the manifest; the caller sets the pool
  bool f64 = false;  // exported FTNR dumps keep full precision
};

const char* engine_version();

// Each runner consumes its config sections, trains / times / renders, writes
// manifest.txt plus its artifacts into opt.out_dir, and returns the process
// exit code. All return 0 on success; run_bench returns 1 when a scaling gate
// fails. Config and capability problems surface as exceptions for the CLI to
// map onto exit codes.
int run_fit_image(const Config& cfg, const RunOptions& opt);
int run_fit_sdf(const Config& cfg, const RunOptions& opt);
int run_fit_pinn(const Config& cfg, const RunOptions& opt);
int run_bench(const Config& cfg, const RunOptions& opt);
int run_eval(const Config& cfg, const RunOptions& opt);

}  // namespace finr
