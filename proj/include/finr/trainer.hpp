#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "finr/model.hpp"
#include "finr/tasks.hpp"

namespace finr {

struct AdamConfig {
  real lr = 1e-4;
  real beta1 = 0.9;
  real beta2 = 0.999;
  real eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. step() consumes and zeroes
// the accumulated gradients; update order follows the list, and every loop is
// serial, so a (params, moments, grads) state maps to exactly one result.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const std::vector<ad::Param*>& params, AdamConfig cfg);

  void step(const std::vector<ad::Param*>& params);

  std::int64_t t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  std::vector<DenseTensor>& m() { return m_; }
  std::vector<DenseTensor>& v() { return v_; }
  void restore(std::int64_t t, std::vector<DenseTensor> m, std::vector<DenseTensor> v);

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<DenseTensor> m_, v_;
};

struct TrainConfig {
  std::int64_t steps = 1000;
  std::uint64_t seed = 0;
  AdamConfig adam;
  std::int64_t log_every = 100;        // metric-row cadence; final step always logs
  bool eval_metrics = true;            // include task.evaluate() values in rows
  std::string checkpoint_path;         // empty: no checkpoints
  std::int64_t checkpoint_every = 0;   // 0: only the final checkpoint
};

struct MetricRow {
  std::int64_t step = 0;  // 1-based, after the parameter update
  real loss = 0;
  NamedValues values;     // loss parts, then evaluation metrics
  real seconds = 0;       // wall clock since training started; excluded from
                          // determinism comparisons
};

struct TrainResult {
  std::vector<MetricRow> history;
  real final_loss = 0;
  std::int64_t steps_done = 0;
  real wall_seconds = 0;
};

// Runs cfg.steps optimization steps from scratch. The task's capability check
// runs before the first step; a non-finite loss or gradient aborts with
// NumericError.
TrainResult train(FInrModel& model, Task& task, const TrainConfig& cfg);

// Continues a run whose checkpoint was written by train() with the same model
// spec, task and seed; restores parameters, optimizer moments, rng state and
// step counter, then trains until cfg.steps. The continuation is bit-exact:
// it replays exactly what the uninterrupted run would have produced.
TrainResult train_resume(FInrModel& model, Task& task, const TrainConfig& cfg,
                         const std::string& checkpoint_file);

// ---- checkpoints -----------------------------------------------------------

// Container: magic "FINR", version u16, then length-prefixed named sections
// (meta / spec / params / adam_m / adam_v). Tensors reuse the FTNR encoding
// at full precision, so save -> load -> save is byte-identical.
struct Checkpoint {
  std::string spec_text;
  std::int64_t step = 0;
  std::uint64_t rng_state = 0;
  std::int64_t adam_t = 0;
  std::vector<std::pair<std::string, DenseTensor>> params;
  std::vector<DenseTensor> adam_m, adam_v;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint parameters into the model (names, order and shapes must
// match exactly) and zeroes the gradients.
void restore_params(FInrModel& model, const Checkpoint& c);

// Canonical key = value rendering of a model spec ([model] plus one [axisK]
// section per axis). Parseable by the config reader, so a checkpoint alone is
// enough to rebuild its model.
std::string spec_to_text(const FInrSpec& spec);
FInrSpec spec_from_text(const std::string& text);

// spec_to_text plus a [run] section naming the task and optimizer; resumes
// refuse checkpoints whose fingerprint differs.
std::string model_fingerprint(const FInrModel& model, const std::string& task_kind,
                              const AdamConfig& adam);

}  // namespace finr
