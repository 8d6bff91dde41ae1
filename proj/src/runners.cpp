#include "finr/runners.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "finr/bench.hpp"
#include "finr/errors.hpp"
#include "finr/image_io.hpp"
#include "finr/metrics.hpp"
#include "finr/tasks.hpp"
#include "finr/trainer.hpp"

namespace finr {

namespace {

constexpr real kPi = 3.14159265358979323846;

std::string fmt(real v) {
  std::ostringstream os;
  os.precision(std::numeric_limits<real>::max_digits10);
  os << v;
  return os.str();
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("an output directory is required (--out)");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(text.data(), std::streamsize(text.size()));
  if (!f) throw IoError("cannot write '" + path + "'");
}

// The manifest is timestamp-free on purpose: two runs of the same command,
// config and flags produce identical manifests, and identical manifests must
// reproduce identical metrics.
void write_manifest(const Config& cfg, const RunOptions& opt, const std::string& command,
                    std::uint64_t seed) {
  std::ostringstream os;
  os << "[run]\n"
     << "command = " << command << "\n"
     << "version = " << engine_version() << "\n"
     << "seed = " << seed << "\n"
     << "threads = " << opt.threads << "\n"
     << "f64 = " << (opt.f64 ? "true" : "false") << "\n"
     << "\n[config]\n";
  for (const auto& kv : cfg.entries()) os << kv.first << " = " << kv.second << "\n";
  write_text(join_path(opt.out_dir, "manifest.txt"), os.str());
}

std::string csv_from_history(const std::vector<MetricRow>& rows) {
  if (rows.empty()) throw IoError("no metric rows to write");
  std::ostringstream os;
  os << "step,loss";
  for (const auto& nv : rows[0].values) os << "," << nv.first;
  os << ",seconds\n";
  for (const MetricRow& r : rows) {
    if (r.values.size() != rows[0].values.size())
      throw IoError("metric rows disagree on their columns");
    os << r.step << "," << fmt(r.loss);
    for (const auto& nv : r.values) os << "," << fmt(nv.second);
    os << "," << fmt(r.seconds) << "\n";
  }
  return os.str();
}

std::size_t get_count(const Config& cfg, const std::string& key, std::int64_t fallback) {
  const std::int64_t v = cfg.get_int(key, fallback);
  if (v < 1) throw ConfigError(key + " must be >= 1, got " + std::to_string(v));
  return std::size_t(v);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

real parse_real(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw ConfigError(what + ": '" + s + "' is not a number");
  return v;
}

// ---- model construction from config ----------------------------------------

SubNetworkSpec subnet_from(const Config& cfg) {
  SubNetworkSpec n;
  n.encoding.kind = encoding_from_string(cfg.get_str("net.encoding", "none"));
  n.encoding.levels = int(cfg.get_int("net.levels", n.encoding.levels));
  n.encoding.features = int(cfg.get_int("net.features", n.encoding.features));
  n.encoding.base_res = int(cfg.get_int("net.base_res", n.encoding.base_res));
  n.encoding.growth = cfg.get_real("net.growth", n.encoding.growth);
  n.hidden_layers = int(cfg.get_int("net.hidden_layers", n.hidden_layers));
  n.width = int(cfg.get_int("net.width", n.width));
  n.activation.kind = act_from_string(cfg.get_str("net.activation", "relu"));
  n.activation.omega0 = cfg.get_real("net.omega0", n.activation.omega0);
  n.activation.s0 = cfg.get_real("net.s0", n.activation.s0);
  n.activation.bias_k = cfg.get_real("net.bias_k", n.activation.bias_k);
  return n;
}

// A single rank broadcasts across every bond/axis of tt and tucker, so
// "ranks = 32" reads naturally for all three modes.
std::vector<std::size_t> resolve_ranks(Mode mode, int d, std::vector<std::size_t> given) {
  std::size_t want = 1;
  if (mode == Mode::TT) want = std::size_t(d > 1 ? d - 1 : 1);
  if (mode == Mode::TU) want = std::size_t(d);
  if (given.size() == 1 && want > 1) given.assign(want, given[0]);
  return given;
}

// One shared sub-network configuration across the axes; the per-axis domains
// come from the task.
FInrSpec spec_from(const Config& cfg, std::size_t channels,
                   const std::vector<std::pair<real, real>>& domains) {
  FInrSpec s;
  s.mode = mode_from_string(cfg.get_str("model.mode", "cp"));
  s.channels = channels;
  s.ranks = resolve_ranks(s.mode, int(domains.size()), cfg.get_sizes("model.ranks", {16}));
  const SubNetworkSpec net = subnet_from(cfg);
  for (const auto& dom : domains) {
    AxisSpec a;
    a.dom_min = dom.first;
    a.dom_max = dom.second;
    a.net = net;
    s.axes.push_back(a);
  }
  s.validate();
  return s;
}

// ---- training glue ----------------------------------------------------------

struct TrainSetup {
  TrainConfig tc;
  std::uint64_t seed = 0;
  std::string resume;
};

TrainSetup train_setup(const Config& cfg, const RunOptions& opt) {
  TrainSetup ts;
  const std::uint64_t file_seed = cfg.get_u64("train.seed", 0);
  ts.seed = opt.seed_set ? opt.seed : file_seed;
  ts.tc.seed = ts.seed;
  ts.tc.steps = cfg.get_int("train.steps", 1000);
  ts.tc.adam.lr = cfg.get_real("train.lr", ts.tc.adam.lr);
  ts.tc.adam.beta1 = cfg.get_real("train.beta1", ts.tc.adam.beta1);
  ts.tc.adam.beta2 = cfg.get_real("train.beta2", ts.tc.adam.beta2);
  ts.tc.adam.eps = cfg.get_real("train.eps", ts.tc.adam.eps);
  ts.tc.log_every = cfg.get_int("train.log_every", 100);
  ts.tc.eval_metrics = cfg.get_bool("train.eval_metrics", true);
  ts.tc.checkpoint_every = cfg.get_int("train.checkpoint_every", 0);
  ts.tc.checkpoint_path = join_path(opt.out_dir, "final.ckpt");
  ts.resume = cfg.get_str("train.resume", "");
  return ts;
}

// Zero-step runs still log one row, so initialization quality is on record.
MetricRow init_row(Task& task, FInrModel& model, std::uint64_t seed, bool eval_metrics) {
  ad::Tape tape;
  NamedValues parts;
  Rng rng(seed);
  ad::Var loss = task.loss(tape, model, rng, parts);
  MetricRow row;
  row.step = 0;
  row.loss = tape.value(loss)[0];
  row.values = std::move(parts);
  if (eval_metrics) {
    const NamedValues m = task.evaluate(model);
    row.values.insert(row.values.end(), m.begin(), m.end());
  }
  return row;
}

TrainResult run_training(FInrModel& model, Task& task, const TrainSetup& ts) {
  TrainResult res = ts.resume.empty() ? train(model, task, ts.tc)
                                      : train_resume(model, task, ts.tc, ts.resume);
  if (res.history.empty())
    res.history.push_back(init_row(task, model, ts.seed, ts.tc.eval_metrics));
  return res;
}

void print_final(const std::string& cmd, const TrainResult& res) {
  const MetricRow& r = res.history.back();
  std::ostringstream os;
  os.precision(6);
  os << cmd << ": step " << r.step << " loss " << r.loss;
  for (const auto& nv : r.values) os << " " << nv.first << " " << nv.second;
  os << " (" << res.wall_seconds << " s)";
  std::cout << os.str() << "\n";
}

// ---- rendering helpers --------------------------------------------------------

// Middle z plane of a (n0, n1, n2, 1) field, as (n0, n1, 1).
DenseTensor mid_plane(const DenseTensor& g) {
  const std::size_t n0 = g.extent(0), n1 = g.extent(1), n2 = g.extent(2);
  DenseTensor out({n0, n1, 1});
  const std::size_t z = n2 / 2;
  for (std::size_t i = 0; i < n0; ++i)
    for (std::size_t j = 0; j < n1; ++j) out[i * n1 + j] = g[(i * n1 + j) * n2 + z];
  return out;
}

// Affine display map for a truncated distance slice: -tau -> black, +tau -> white.
DenseTensor sdf_display(const DenseTensor& slice, real tau) {
  DenseTensor out = slice;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] + tau) / (2 * tau);
  return out;
}

DenseTensor occupancy_diff(const DenseTensor& pred_slice, const DenseTensor& true_slice) {
  DenseTensor out = pred_slice;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = ((pred_slice[i] < 0) != (true_slice[i] < 0)) ? real(1) : real(0);
  return out;
}

// truth | prediction | 8x-amplified error of the vorticity channel at one time
// index, as a single grayscale collage with white gaps.
DenseTensor vorticity_panels(const DenseTensor& truth, const DenseTensor& pred, std::size_t ti) {
  const std::size_t X = truth.extent(1), Y = truth.extent(2), C = truth.extent(3);
  const auto omega = [&](const DenseTensor& g, std::size_t x, std::size_t y) {
    return g[((ti * X + x) * Y + y) * C + 2];
  };
  real lo = std::numeric_limits<real>::infinity(), hi = -lo;
  for (std::size_t x = 0; x < X; ++x)
    for (std::size_t y = 0; y < Y; ++y) {
      lo = std::min(lo, omega(truth, x, y));
      hi = std::max(hi, omega(truth, x, y));
    }
  if (hi - lo < 1e-12) hi = lo + 1;  // flat slice: avoid dividing by zero
  const std::size_t gap = 4, W = 3 * Y + 2 * gap;
  DenseTensor out({X, W, 1});
  out.fill(1.0);
  for (std::size_t x = 0; x < X; ++x)
    for (std::size_t y = 0; y < Y; ++y) {
      const real t = omega(truth, x, y), p = omega(pred, x, y);
      out[x * W + y] = (t - lo) / (hi - lo);
      out[x * W + Y + gap + y] = (p - lo) / (hi - lo);
      out[x * W + 2 * (Y + gap) + y] = std::min(real(8) * std::abs(p - t), real(1));
    }
  return out;
}

void dump_image(const std::string& dir, const std::string& stem, const DenseTensor& data,
                const DenseTensor& png_view, bool f64) {
  save_tensor(join_path(dir, stem + ".ftnr"), data, !f64);
  write_png(join_path(dir, stem + ".png"), png_view);
}

std::vector<real> grid_coords(real lo, real hi, std::size_t n, const std::string& kind) {
  if (n < 1) throw ConfigError("grid extents must be >= 1");
  std::vector<real> xs(n);
  for (std::size_t i = 0; i < n; ++i) {
    real t;
    if (kind == "centers")
      t = (real(i) + 0.5) / real(n);
    else if (kind == "exclusive")
      t = real(i) / real(n);
    else if (kind == "inclusive")
      t = (n == 1) ? real(0) : real(i) / real(n - 1);
    else
      throw ConfigError("unknown grid kind '" + kind + "' (centers | inclusive | exclusive)");
    xs[i] = lo + (hi - lo) * t;
  }
  return xs;
}

}  // namespace

const char* engine_version() { return "finr-0.1.0"; }

// ---- fit-image ---------------------------------------------------------------

int run_fit_image(const Config& cfg, const RunOptions& opt) {
  ensure_dir(opt.out_dir);

  DenseTensor target;
  const std::string source = cfg.get_str("image.source", "synthetic");
  if (source == "synthetic") {
    target = make_sinusoid_image(cfg.get_u64("image.seed", 1), get_count(cfg, "image.height", 64),
                                 get_count(cfg, "image.width", 64), get_count(cfg, "image.terms", 8),
                                 get_count(cfg, "image.max_freq", 4));
  } else if (source == "png") {
    target = read_png(cfg.require_str("image.path"));
  } else {
    throw ConfigError("image.source must be 'synthetic' or 'png', got '" + source + "'");
  }

  ImageTaskConfig icfg;
  icfg.batch = get_count(cfg, "image.batch", std::int64_t(icfg.batch));
  const std::size_t channels = target.extent(2);
  ImageTask task(std::move(target), icfg);

  const TrainSetup ts = train_setup(cfg, opt);
  const FInrSpec spec = spec_from(cfg, channels, {{0, 1}, {0, 1}});
  cfg.reject_unused();
  write_manifest(cfg, opt, "fit-image", ts.seed);

  FInrModel model(spec, ts.seed);
  const TrainResult res = run_training(model, task, ts);
  write_text(join_path(opt.out_dir, "metrics.csv"), csv_from_history(res.history));

  const DenseTensor pred = task.predict(model);
  dump_image(opt.out_dir, "recon", pred, pred, opt.f64);
  const DenseTensor err = error_map(pred, task.target());
  dump_image(opt.out_dir, "error_map", err, err, opt.f64);
  print_final("fit-image", res);
  return 0;
}

// ---- fit-sdf -------------------------------------------------------------------

int run_fit_sdf(const Config& cfg, const RunOptions& opt) {
  ensure_dir(opt.out_dir);

  const Shape shape = shape_from_name(cfg.get_str("sdf.shape", "sphere"));
  const std::size_t n = get_count(cfg, "sdf.grid", 48);
  SdfTaskConfig scfg;
  scfg.tau = cfg.get_real("sdf.tau", scfg.tau);
  scfg.band_frac = cfg.get_real("sdf.band_frac", scfg.band_frac);
  scfg.w_eik = cfg.get_real("sdf.w_eik", scfg.w_eik);
  scfg.w_data = cfg.get_real("sdf.w_data", scfg.w_data);
  scfg.w_surf = cfg.get_real("sdf.w_surf", scfg.w_surf);
  const bool oracle = cfg.get_bool("sdf.oracle", false);

  SdfTask task(shape, n, scfg);
  const TrainSetup ts = train_setup(cfg, opt);
  const FInrSpec spec = spec_from(cfg, 1, {{-1, 1}, {-1, 1}, {-1, 1}});
  cfg.reject_unused();
  write_manifest(cfg, opt, "fit-sdf", ts.seed);

  if (oracle) {
    // Debug path: inject the analytic field instead of training. Metrics must
    // come out perfect by construction; no model exists, so no checkpoint.
    MetricRow row;
    row.step = 0;
    row.loss = std::numeric_limits<real>::quiet_NaN();
    row.values = task.oracle_metrics();
    write_text(join_path(opt.out_dir, "metrics.csv"), csv_from_history({row}));

    const DenseTensor true_slice = mid_plane(task.target());
    const DenseTensor raw_slice = mid_plane(task.raw());
    dump_image(opt.out_dir, "slice_true", raw_slice, sdf_display(true_slice, scfg.tau), opt.f64);
    dump_image(opt.out_dir, "slice_pred", raw_slice, sdf_display(true_slice, scfg.tau), opt.f64);
    dump_image(opt.out_dir, "occ_diff", occupancy_diff(raw_slice, raw_slice),
               occupancy_diff(raw_slice, raw_slice), opt.f64);
    std::cout << "fit-sdf: oracle injection,";
    for (const auto& nv : row.values) std::cout << " " << nv.first << " " << nv.second;
    std::cout << "\n";
    return 0;
  }

  FInrModel model(spec, ts.seed);
  const TrainResult res = run_training(model, task, ts);
  write_text(join_path(opt.out_dir, "metrics.csv"), csv_from_history(res.history));

  const DenseTensor pred = task.predict(model);
  const DenseTensor pred_slice = mid_plane(pred);
  const DenseTensor true_slice = mid_plane(task.target());
  dump_image(opt.out_dir, "slice_pred", pred_slice, sdf_display(pred_slice, scfg.tau), opt.f64);
  dump_image(opt.out_dir, "slice_true", mid_plane(task.raw()), sdf_display(true_slice, scfg.tau),
             opt.f64);
  const DenseTensor occ = occupancy_diff(pred_slice, true_slice);
  dump_image(opt.out_dir, "occ_diff", occ, occ, opt.f64);
  print_final("fit-sdf", res);
  return 0;
}

// ---- fit-pinn -------------------------------------------------------------------

int run_fit_pinn(const Config& cfg, const RunOptions& opt) {
  ensure_dir(opt.out_dir);

  PinnTaskConfig pcfg;
  pcfg.nu = cfg.get_real("pinn.nu", pcfg.nu);
  pcfg.obs_t = get_count(cfg, "pinn.obs_t", std::int64_t(pcfg.obs_t));
  pcfg.obs_x = get_count(cfg, "pinn.obs_x", std::int64_t(pcfg.obs_x));
  pcfg.obs_y = get_count(cfg, "pinn.obs_y", std::int64_t(pcfg.obs_y));
  pcfg.eval_t = get_count(cfg, "pinn.eval_t", std::int64_t(pcfg.eval_t));
  pcfg.eval_x = get_count(cfg, "pinn.eval_x", std::int64_t(pcfg.eval_x));
  pcfg.eval_y = get_count(cfg, "pinn.eval_y", std::int64_t(pcfg.eval_y));
  pcfg.collocation = get_count(cfg, "pinn.collocation", std::int64_t(pcfg.collocation));
  pcfg.w_data = cfg.get_real("pinn.w_data", pcfg.w_data);
  pcfg.w_pde = cfg.get_real("pinn.w_pde", pcfg.w_pde);

  PinnTask task(pcfg);
  const TrainSetup ts = train_setup(cfg, opt);
  const FInrSpec spec = spec_from(cfg, 3, {{0, 1}, {0, 2 * kPi}, {0, 2 * kPi}});
  cfg.reject_unused();
  write_manifest(cfg, opt, "fit-pinn", ts.seed);

  FInrModel model(spec, ts.seed);
  const TrainResult res = run_training(model, task, ts);
  write_text(join_path(opt.out_dir, "metrics.csv"), csv_from_history(res.history));

  const DenseTensor pred = task.predict(model);
  const DenseTensor truth = task.reference_grid(task.eval_coords());
  save_tensor(join_path(opt.out_dir, "pred.ftnr"), pred, !opt.f64);
  const std::size_t T = pred.extent(0);
  for (const std::size_t ti : {std::size_t(0), T / 2, T - 1}) {
    const DenseTensor panel = vorticity_panels(truth, pred, ti);
    dump_image(opt.out_dir, "panels_t" + std::to_string(ti), panel, panel, opt.f64);
  }
  print_final("fit-pinn", res);
  return 0;
}

// ---- bench -----------------------------------------------------------------------

namespace {

struct BenchRow {
  std::string mode;
  std::size_t n = 0, r = 0;
  std::string phase;
  int reps = 0;
  double median = 0;
  double predicted = 0;
};

struct SlopeRow {
  std::string mode;
  std::size_t r = 0;
  PowerFit fit;
};

}  // namespace

int run_bench(const Config& cfg, const RunOptions& opt) {
  ensure_dir(opt.out_dir);

  const std::vector<std::string> modes = split_list(cfg.get_str("bench.modes", "cp,monolithic"));
  const std::vector<std::size_t> ns = cfg.get_sizes("bench.n", {64, 128, 256, 512});
  const std::vector<std::size_t> ranks = cfg.get_sizes("bench.ranks", {16});
  const std::size_t width = get_count(cfg, "bench.width", 256);
  const std::size_t layers = get_count(cfg, "bench.layers", 4);
  const std::size_t channels = get_count(cfg, "bench.channels", 1);
  const int d = int(get_count(cfg, "bench.d", 2));
  const int reps = int(get_count(cfg, "bench.reps", 5));
  const real min_time = cfg.get_real("bench.min_time", 0.02);
  Activation act;
  act.kind = act_from_string(cfg.get_str("bench.activation", "relu"));
  const std::uint64_t seed = opt.seed_set ? opt.seed : cfg.get_u64("train.seed", 0);
  cfg.reject_unused();
  write_manifest(cfg, opt, "bench", seed);
  if (modes.empty() || ns.empty())
    throw ConfigError("bench needs at least one mode and one grid size");

  std::vector<BenchRow> rows;
  std::vector<SlopeRow> slopes;

  for (const std::string& mode_str : modes) {
    const bool mono = (mode_str == "monolithic" || mode_str == "mono");
    if (!mono) (void)mode_from_string(mode_str);  // reject typos before timing
    const std::vector<std::size_t> rlist = mono ? std::vector<std::size_t>{0} : ranks;
    for (const std::size_t r : rlist) {
      std::vector<double> xs, ys;
      for (const std::size_t n : ns) {
        std::vector<std::vector<real>> coords;
        coords.resize(std::size_t(d));
        for (int k = 0; k < d; ++k) coords[std::size_t(k)] = grid_coords(-1, 1, n, "inclusive");

        double fwd_med = 0, step_med = 0;
        if (mono) {
          MonolithicSpec ms;
          ms.channels = channels;
          ms.hidden_layers = int(layers);
          ms.width = int(width);
          ms.activation = act;
          ms.axes.assign(std::size_t(d), AxisSpec{});
          MonolithicModel model(ms, seed);

          std::size_t total = 1;
          for (int k = 0; k < d; ++k) total *= n;
          DenseTensor pts({total, std::size_t(d)});
          std::vector<std::size_t> idx(std::size_t(d), 0);
          for (std::size_t p = 0; p < total; ++p) {
            for (int k = 0; k < d; ++k) pts[p * std::size_t(d) + std::size_t(k)] =
                coords[std::size_t(k)][idx[std::size_t(k)]];
            for (int k = d - 1; k >= 0; --k) {
              if (++idx[std::size_t(k)] < n) break;
              idx[std::size_t(k)] = 0;
            }
          }
          fwd_med = time_callable([&] { ad::Tape t; (void)model.forward(t, pts); }, reps,
                                  min_time).median_s;
          step_med = time_callable(
                         [&] {
                           ad::Tape t;
                           ad::Var v = model.forward(t, pts);
                           t.backward(t.mean_sq(v));
                           for (ad::Param* p : model.params()) p->zero_grad();
                         },
                         reps, min_time)
                         .median_s;
        } else {
          FInrSpec spec;
          spec.mode = mode_from_string(mode_str);
          spec.channels = channels;
          spec.ranks = resolve_ranks(spec.mode, d, {r});
          for (int k = 0; k < d; ++k) {
            AxisSpec a;
            a.net.hidden_layers = int(layers);
            a.net.width = int(width);
            a.net.activation = act;
            spec.axes.push_back(a);
          }
          spec.validate();
          FInrModel model(spec, seed);
          fwd_med = time_callable([&] { ad::Tape t; (void)model.eval_grid_nodes(t, coords, 0); },
                                  reps, min_time).median_s;
          step_med = time_callable(
                         [&] {
                           ad::Tape t;
                           FInrModel::GridEval ge = model.eval_grid_nodes(t, coords, 0);
                           t.backward(t.mean_sq(ge.value));
                           for (ad::Param* p : model.params()) p->zero_grad();
                         },
                         reps, min_time)
                         .median_s;
        }
        const double predicted =
            predict_cost(mono ? "monolithic" : mode_str, d, n, width, layers, r).total();
        rows.push_back({mode_str, n, r, "forward", reps, fwd_med, predicted});
        rows.push_back({mode_str, n, r, "step", reps, step_med, predicted});
        xs.push_back(double(n));
        ys.push_back(step_med);
      }
      if (ns.size() >= 2) slopes.push_back({mode_str, r, fit_loglog(xs, ys)});
    }
  }

  {
    std::ostringstream os;
    os << "mode,n,r,phase,reps,median_s,predicted_madds\n";
    for (const BenchRow& b : rows)
      os << b.mode << "," << b.n << "," << b.r << "," << b.phase << "," << b.reps << ","
         << fmt(b.median) << "," << fmt(b.predicted) << "\n";
    write_text(join_path(opt.out_dir, "bench.csv"), os.str());
  }

  // Scaling gates, per-step phase, d = 2 only: factorized fits must stay near
  // linear in n, the monolithic baseline near quadratic.
  bool all_pass = true;
  {
    std::ostringstream os;
    os << "mode,r,slope,r2,gate,pass\n";
    for (const SlopeRow& s : slopes) {
      const bool mono = (s.mode == "monolithic" || s.mode == "mono");
      std::string gate = "-";
      bool gated = d == 2, pass = true;
      if (gated) {
        gate = mono ? "slope>=1.7" : "slope<=1.4";
        pass = (mono ? s.fit.slope >= 1.7 : s.fit.slope <= 1.4) && s.fit.r2 >= 0.98;
        all_pass = all_pass && pass;
      }
      os << s.mode << "," << s.r << "," << fmt(s.fit.slope) << "," << fmt(s.fit.r2) << "," << gate
         << "," << (gated ? (pass ? "1" : "0") : "-") << "\n";
      std::ostringstream line;
      line.precision(4);
      line << "bench " << s.mode << (mono ? "" : " r=" + std::to_string(s.r)) << ": step slope "
           << s.fit.slope << " (r2 " << s.fit.r2 << ")";
      if (gated) line << " gate " << gate << " " << (pass ? "PASS" : "FAIL");
      std::cout << line.str() << "\n";
    }
    write_text(join_path(opt.out_dir, "slopes.csv"), os.str());
  }

  // Speed ratio and cost-model ordering at the largest grid.
  const std::size_t nmax = *std::max_element(ns.begin(), ns.end());
  const auto step_row = [&](const std::string& mode, std::size_t r) -> const BenchRow* {
    for (const BenchRow& b : rows)
      if (b.mode == mode && b.r == r && b.n == nmax && b.phase == "step") return &b;
    return nullptr;
  };
  const BenchRow* mono_row = step_row("monolithic", 0);
  if (!mono_row) mono_row = step_row("mono", 0);
  if (mono_row) {
    for (const BenchRow& b : rows) {
      if (b.phase != "step" || b.n != nmax || &b == mono_row) continue;
      std::ostringstream line;
      line.precision(3);
      line << "bench " << b.mode << " r=" << b.r << " vs monolithic at n=" << nmax << ": "
           << mono_row->median / b.median << "x faster per step; cost model ordering "
           << (b.predicted < mono_row->predicted ? "factorized < monolithic"
                                                 : "monolithic <= factorized")
           << ", measured " << (b.median < mono_row->median ? "agrees" : "disagrees");
      std::cout << line.str() << "\n";
    }
  }

  if (!all_pass) std::cout << "bench: SCALING GATES FAILED\n";
  return all_pass ? 0 : 1;
}

// ---- eval ------------------------------------------------------------------------

int run_eval(const Config& cfg, const RunOptions& opt) {
  ensure_dir(opt.out_dir);

  const std::string ck_path = cfg.require_str("eval.checkpoint");
  const Checkpoint ck = load_checkpoint(ck_path);
  const FInrSpec spec = spec_from_text(ck.spec_text);
  FInrModel model(spec, 0);
  restore_params(model, ck);
  const std::string task_kind = Config::from_string(ck.spec_text).get_str("run.task", "");
  const int d = spec.d();

  const std::vector<std::size_t> grid = cfg.get_sizes("eval.grid", {});
  if (int(grid.size()) != d)
    throw ConfigError("eval.grid must list " + std::to_string(d) +
                      " extents to match the checkpoint model");

  // Per-axis sampling convention; the default mirrors how each task lays out
  // its grids, so a matching-resolution render reproduces training exactly.
  std::string kind_default = "inclusive";
  if (task_kind == "image") kind_default = "centers";
  if (task_kind == "pinn") kind_default = "inclusive,exclusive,exclusive";
  std::vector<std::string> kinds = split_list(cfg.get_str("eval.kind", kind_default));
  if (kinds.size() == 1 && d > 1) kinds.assign(std::size_t(d), kinds[0]);
  if (int(kinds.size()) != d)
    throw ConfigError("eval.kind must give one sampling kind or one per axis");

  std::vector<std::vector<real>> coords;
  coords.resize(std::size_t(d));
  for (int k = 0; k < d; ++k) {
    const AxisSpec& a = spec.axes[std::size_t(k)];
    real lo = a.dom_min, hi = a.dom_max;
    const std::string key = "eval.range" + std::to_string(k);
    const std::string given = cfg.get_str(key, "");
    if (!given.empty()) {
      const std::vector<std::string> parts = split_list(given);
      if (parts.size() != 2) throw ConfigError(key + " must be 'lo,hi'");
      lo = parse_real(parts[0], key);
      hi = parse_real(parts[1], key);
      if (lo > hi) throw ConfigError(key + ": lo must not exceed hi");
      if (lo < a.dom_min || hi > a.dom_max) {
        std::cerr << "warning: " << key << " [" << lo << ", " << hi
                  << "] leaves the model domain [" << a.dom_min << ", " << a.dom_max
                  << "]; clamping\n";
        lo = std::max(lo, a.dom_min);
        hi = std::min(hi, a.dom_max);
      }
    }
    coords[std::size_t(k)] = grid_coords(lo, hi, grid[std::size_t(k)], kinds[std::size_t(k)]);
  }

  const std::string ref = cfg.get_str("eval.reference", "none");
  const std::uint64_t ref_seed = cfg.get_u64("eval.seed", 1);
  const std::size_t ref_terms = get_count(cfg, "eval.terms", 8);
  const std::size_t ref_maxf = get_count(cfg, "eval.max_freq", 4);
  const real ref_nu = cfg.get_real("eval.nu", 0.01);
  const real ref_tau = cfg.get_real("eval.tau", 0.1);
  cfg.reject_unused();
  write_manifest(cfg, opt, "eval", opt.seed_set ? opt.seed : 0);

  const DenseTensor out = model.eval_grid(coords);
  save_tensor(join_path(opt.out_dir, "render.ftnr"), out, !opt.f64);
  const std::size_t C = spec.channels;
  if (d == 2 && (C == 1 || C == 3)) write_png(join_path(opt.out_dir, "render.png"), out);

  NamedValues metrics;
  if (ref == "sinusoid") {
    if (d != 2 || C != 1)
      throw ConfigError("the sinusoid reference needs a 2-axis single-channel model");
    for (int k = 0; k < 2; ++k)
      for (std::size_t i = 0; i < coords[std::size_t(k)].size(); ++i) {
        const real want = (real(i) + 0.5) / real(grid[std::size_t(k)]);
        if (std::abs(coords[std::size_t(k)][i] - want) > 1e-9)
          throw ConfigError("the sinusoid reference requires pixel-center sampling over [0, 1]");
      }
    const DenseTensor truth = make_sinusoid_image(ref_seed, grid[0], grid[1], ref_terms, ref_maxf);
    metrics.emplace_back("mse", mse(out, truth));
    metrics.emplace_back("psnr", psnr(out, truth, 1.0));
    if (grid[0] >= 11 && grid[1] >= 11) metrics.emplace_back("ssim", ssim(out, truth));
  } else if (ref == "sphere" || ref == "torus" || ref == "two_spheres") {
    if (d != 3 || C != 1)
      throw ConfigError("shape references need a 3-axis single-channel model");
    const Shape shape = shape_from_name(ref);
    DenseTensor raw({grid[0], grid[1], grid[2], 1});
    std::size_t p = 0;
    for (const real x : coords[0])
      for (const real y : coords[1])
        for (const real z : coords[2]) raw[p++] = shape_sdf(shape, x, y, z);
    metrics.emplace_back("iou", iou(out, raw));
    metrics.emplace_back("mse", mse(out, truncate_sdf(raw, ref_tau)));
  } else if (ref == "taylor_green") {
    if (d != 3 || C != 3) throw ConfigError("the flow reference needs a 3-axis 3-channel model");
    PinnTaskConfig pc;
    pc.nu = ref_nu;
    const DenseTensor truth = PinnTask(pc).reference_grid(coords);
    real om = 0, all = 0;
    const std::size_t rows = out.size() / 3;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        const real dlt = out[i * 3 + c] - truth[i * 3 + c];
        all += dlt * dlt;
        if (c == 2) om += dlt * dlt;
      }
    }
    metrics.emplace_back("mse_omega", om / real(rows));
    metrics.emplace_back("mse_all", all / real(rows * 3));
  } else if (ref != "none") {
    throw ConfigError("unknown eval.reference '" + ref +
                      "' (none | sinusoid | sphere | torus | two_spheres | taylor_green)");
  }

  if (!metrics.empty()) {
    std::ostringstream os;
    os << "metric,value\n";
    for (const auto& nv : metrics) os << nv.first << "," << fmt(nv.second) << "\n";
    write_text(join_path(opt.out_dir, "eval_metrics.csv"), os.str());
    std::ostringstream line;
    line.precision(6);
    line << "eval:";
    for (const auto& nv : metrics) line << " " << nv.first << " " << nv.second;
    std::cout << line.str() << "\n";
  }
  std::cout << "eval: rendered";
  for (int k = 0; k < d; ++k) std::cout << (k ? "x" : " ") << grid[std::size_t(k)];
  std::cout << " grid to " << join_path(opt.out_dir, "render.ftnr") << "\n";
  return 0;
}

}  // namespace finr
