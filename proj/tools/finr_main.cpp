#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "finr/config.hpp"
#include "finr/errors.hpp"
#include "finr/runners.hpp"

namespace {

// --threads wins; FINR_THREADS is the fallback; 0 leaves the pool alone.
int resolve_threads(int flag_threads) {
  if (flag_threads > 0) return flag_threads;
  if (const char* env = std::getenv("FINR_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      throw finr::ConfigError(std::string("FINR_THREADS must be a positive integer, got '") + env +
                              "'");
    return static_cast<int>(v);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"factorized implicit neural representation engine"};
  app.set_version_flag("--version", finr::engine_version());
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  int threads = 0;
  bool f64 = false;

  const std::pair<const char*, const char*> commands[] = {
      {"fit-image", "fit a factorized model to a 2-D image"},
      {"fit-sdf", "fit a truncated signed distance field with an Eikonal penalty"},
      {"fit-pinn", "fit a flow field from coarse observations plus physics residuals"},
      {"bench", "time factorized vs monolithic grid training and fit scaling slopes"},
      {"eval", "render a checkpoint on an arbitrary grid"},
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.first, c.second);
    sub->add_option("--config", config_path, "config file (key = value with [sections])")
        ->required();
    sub->add_option("--out", out_dir, "output directory for artifacts")->required();
    sub->add_option("--seed", seed, "override the [train] seed");
    sub->add_option("--threads", threads, "worker thread count (default: FINR_THREADS, else all)");
    sub->add_flag("--f64", f64, "export FTNR dumps at full precision instead of f32");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    finr::RunOptions opt;
    opt.out_dir = out_dir;
    opt.seed = seed;
    opt.seed_set = sub->count("--seed") > 0;
    opt.f64 = f64;
    opt.threads = resolve_threads(threads);
#ifdef _OPENMP
    if (opt.threads > 0) omp_set_num_threads(opt.threads);
#endif
    const finr::Config cfg = finr::Config::from_file(config_path);

    const std::string name = sub->get_name();
    if (name == "fit-image") return finr::run_fit_image(cfg, opt);
    if (name == "fit-sdf") return finr::run_fit_sdf(cfg, opt);
    if (name == "fit-pinn") return finr::run_fit_pinn(cfg, opt);
    if (name == "bench") return finr::run_bench(cfg, opt);
    if (name == "eval") return finr::run_eval(cfg, opt);
    std::cerr << "error: unknown command '" << name << "'\n";
    return 2;
  } catch (const finr::CapabilityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const finr::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const finr::FinrError& e) {
    // Config, shape, domain and io problems are all "fix the inputs".
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
