#include "finr/trainer.hpp"

#include <chrono>
#include <cmath>

#include "finr/errors.hpp"

namespace finr {

AdamState::AdamState(const std::vector<ad::Param*>& params, AdamConfig cfg) : cfg_(cfg) {
  // lr = 0 is legal: it freezes the parameters, which makes initialization
  // renders expressible as zero-movement runs.
  if (cfg_.lr < 0 || cfg_.eps <= 0) throw ConfigError("adam needs lr >= 0 and eps > 0");
  if (cfg_.beta1 < 0 || cfg_.beta1 >= 1 || cfg_.beta2 < 0 || cfg_.beta2 >= 1)
    throw ConfigError("adam betas must lie in [0, 1)");
  for (const ad::Param* p : params) {
    m_.emplace_back(p->value.extents());
    v_.emplace_back(p->value.extents());
  }
}

void AdamState::restore(std::int64_t t, std::vector<DenseTensor> m, std::vector<DenseTensor> v) {
  if (m.size() != m_.size() || v.size() != v_.size())
    throw IoError("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < m_.size(); ++i)
    if (!m[i].same_shape(m_[i]) || !v[i].same_shape(v_[i]))
      throw IoError("optimizer moment shapes do not match the parameters");
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

void AdamState::step(const std::vector<ad::Param*>& params) {
  if (params.size() != m_.size()) throw ShapeError("adam step: parameter list changed");
  ++t_;
  const real bc1 = 1 - std::pow(cfg_.beta1, real(t_));
  const real bc2 = 1 - std::pow(cfg_.beta2, real(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    ad::Param& p = *params[k];
    DenseTensor& m = m_[k];
    DenseTensor& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const real g = p.grad[i];
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g * g;
      p.value[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      p.grad[i] = 0;
    }
  }
}

namespace {

struct ResumePoint {
  std::int64_t step = 0;
  std::uint64_t rng_state = 0;
};

Checkpoint snapshot(FInrModel& model, Task& task, const TrainConfig& cfg, const AdamState& adam,
                    std::vector<DenseTensor> m, std::vector<DenseTensor> v, std::int64_t step,
                    std::uint64_t rng_state) {
  Checkpoint c;
  c.spec_text = model_fingerprint(model, task.kind(), cfg.adam);
  c.step = step;
  c.rng_state = rng_state;
  c.adam_t = adam.t();
  for (ad::Param* p : model.params()) c.params.emplace_back(p->name, p->value);
  c.adam_m = std::move(m);
  c.adam_v = std::move(v);
  return c;
}

TrainResult train_impl(FInrModel& model, Task& task, const TrainConfig& cfg,
                       const ResumePoint* resume, Checkpoint* loaded) {
  if (cfg.steps < 0) throw ConfigError("step count must be >= 0");
  if (cfg.log_every < 0 || cfg.checkpoint_every < 0)
    throw ConfigError("cadences must be >= 0");
  task.check_model(model);

  std::vector<ad::Param*> params = model.params();
  AdamState adam(params, cfg.adam);
  Rng rng(cfg.seed);
  std::int64_t start = 0;
  if (resume) {
    adam.restore(loaded->adam_t, std::move(loaded->adam_m), std::move(loaded->adam_v));
    rng.set_state(resume->rng_state);
    start = resume->step;
    if (start > cfg.steps)
      throw ConfigError("checkpoint is already past the requested step count");
  }

  const auto t0 = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<real>(std::chrono::steady_clock::now() - t0).count();
  };
  const auto save_at = [&](std::int64_t step) {
    // Copy the moments out so the checkpoint owns plain tensors.
    Checkpoint c = snapshot(model, task, cfg, adam, adam.m(), adam.v(), step, rng.state());
    save_checkpoint(cfg.checkpoint_path, c);
  };

  TrainResult out;
  real last_loss = 0;
  for (std::int64_t s = start; s < cfg.steps; ++s) {
    ad::Tape tape;
    NamedValues parts;
    ad::Var loss = task.loss(tape, model, rng, parts);
    last_loss = tape.value(loss)[0];
    if (!std::isfinite(last_loss))
      throw NumericError("non-finite loss at step " + std::to_string(s + 1));
    tape.backward(loss);
    adam.step(params);

    const std::int64_t done = s + 1;
    const bool log = done == cfg.steps || (cfg.log_every > 0 && done % cfg.log_every == 0);
    if (log) {
      MetricRow row;
      row.step = done;
      row.loss = last_loss;
      row.values = parts;
      if (cfg.eval_metrics) {
        const NamedValues metrics = task.evaluate(model);
        row.values.insert(row.values.end(), metrics.begin(), metrics.end());
      }
      row.seconds = elapsed();
      out.history.push_back(std::move(row));
    }
    if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
        done % cfg.checkpoint_every == 0 && done != cfg.steps)
      save_at(done);
  }
  if (!cfg.checkpoint_path.empty()) save_at(cfg.steps);

  out.final_loss = last_loss;
  out.steps_done = cfg.steps - start;
  out.wall_seconds = elapsed();
  return out;
}

}  // namespace

TrainResult train(FInrModel& model, Task& task, const TrainConfig& cfg) {
  return train_impl(model, task, cfg, nullptr, nullptr);
}

void restore_params(FInrModel& model, const Checkpoint& c) {
  std::vector<ad::Param*> params = model.params();
  if (c.params.size() != params.size())
    throw IoError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (c.params[i].first != params[i]->name)
      throw IoError("checkpoint parameter order mismatch at '" + c.params[i].first + "'");
    if (!c.params[i].second.same_shape(params[i]->value))
      throw IoError("checkpoint parameter shape mismatch at '" + c.params[i].first + "'");
    params[i]->value = c.params[i].second;
    params[i]->zero_grad();
  }
}

TrainResult train_resume(FInrModel& model, Task& task, const TrainConfig& cfg,
                         const std::string& checkpoint_file) {
  Checkpoint c = load_checkpoint(checkpoint_file);
  const std::string want = model_fingerprint(model, task.kind(), cfg.adam);
  if (c.spec_text != want)
    throw ConfigError("checkpoint was written for a different setup:\n  have " + c.spec_text +
                      "\n  want " + want);
  restore_params(model, c);
  ResumePoint rp{c.step, c.rng_state};
  return train_impl(model, task, cfg, &rp, &c);
}

}  // namespace finr
