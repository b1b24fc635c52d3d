#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vaeneu/checkpoint.hpp"
#include "vaeneu/metrics.hpp"

namespace vaeneu {

struct TrainConfig {
  std::size_t max_steps = 100000;
  std::size_t patience_steps = 5000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double rmsprop_decay = 0.99;
  double rmsprop_epsilon = 1e-8;
  std::size_t eval_every = 100;
  std::size_t validation_samples = 100;
  double grad_clip_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 0;

  void validate() const {
    if (max_steps < 1) throw ConfigError("train.max_steps must be at least 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
    if (eval_every < 1) throw ConfigError("train.eval_every must be at least 1");
    if (patience_steps < eval_every) {
      throw ConfigError("train.patience_steps must be at least train.eval_every");
    }
    if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be non-negative");
    if (!(rmsprop_decay >= 0.0 && rmsprop_decay < 1.0)) {
      throw ConfigError("train.rmsprop_decay must lie in [0, 1)");
    }
    if (!(rmsprop_epsilon >= 0.0)) throw ConfigError("train.rmsprop_epsilon must be non-negative");
    if (validation_samples < 1) throw ConfigError("train.validation_samples must be at least 1");
    if (!(grad_clip_norm >= 0.0)) throw ConfigError("train.grad_clip_norm must be non-negative");
  }
};

/// Running mean-square accumulators, keyed by parameter name.
struct OptimizerState {
  std::map<std::string, std::vector<double>> mean_square;
  std::size_t step = 0;
};

/// v <- rho v + (1 - rho) g^2;  p <- p - lr g / (sqrt(v) + eps)
inline void rmsprop_update(Tensor& param, const Tensor& grad, std::vector<double>& v,
                           const TrainConfig& cfg) {
  if (grad.shape() != param.shape()) {
    throw ShapeError("gradient shape " + shape_string(grad.shape()) + " != parameter shape " +
                     shape_string(param.shape()));
  }
  if (v.empty()) v.assign(param.size(), 0.0);
  if (v.size() != param.size()) throw ShapeError("optimizer state does not match parameter");
  const double rho = cfg.rmsprop_decay;
  auto p = param.values();
  const auto& g = grad.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = rho * v[i] + (1.0 - rho) * g[i] * g[i];
    p[i] -= cfg.learning_rate * g[i] / (std::sqrt(v[i]) + cfg.rmsprop_epsilon);
  }
}

inline void rmsprop_step(std::map<std::string, Tensor>& params,
                         const std::map<std::string, Tensor>& grads, OptimizerState& state,
                         const TrainConfig& cfg) {
  if (grads.size() != params.size()) throw ShapeError("one gradient per parameter required");
  for (auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) throw ShapeError("no gradient for parameter '" + name + "'");
    rmsprop_update(p, g->second, state.mean_square[name], cfg);
  }
  ++state.step;
}

inline void rmsprop_step(VaeneuModel& model, const std::map<std::string, Tensor>& grads,
                         OptimizerState& state, const TrainConfig& cfg) {
  std::size_t seen = 0;
  model.for_each_parameter([&](const std::string& name, Tensor& p) {
    auto g = grads.find(name);
    if (g == grads.end()) throw ShapeError("no gradient for parameter '" + name + "'");
    rmsprop_update(p, g->second, state.mean_square[name], cfg);
    ++seen;
  });
  if (seen != grads.size()) throw ShapeError("one gradient per parameter required");
  ++state.step;
}

/// Uniform sampling with replacement over a windowed dataset.
class BatchSampler {
 public:
  BatchSampler(const WindowedDataset& data, std::size_t batch_size, RngStream rng)
      : data_(&data), batch_size_(batch_size), rng_(rng) {
    if (data.empty()) throw DataError("cannot sample batches from an empty dataset");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
  }

  std::vector<std::size_t> next_indices() {
    std::vector<std::size_t> idx(batch_size_);
    for (auto& i : idx) i = static_cast<std::size_t>(rng_.uniform_index(data_->size()));
    return idx;
  }

  /// histories [B x HWS], targets [B x 1].
  std::pair<Tensor, Tensor> next() { return gather_batch(next_indices()); }

  std::pair<Tensor, Tensor> gather_batch(const std::vector<std::size_t>& idx) const {
    const std::size_t hws = data_->history_size;
    Tensor h(Shape{idx.size(), hws});
    Tensor y(Shape{idx.size(), 1});
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto src = data_->history(idx[b]);
      std::copy(src.begin(), src.end(), h.values().begin() + static_cast<std::ptrdiff_t>(b * hws));
      y[b] = data_->target(idx[b]);
    }
    return {std::move(h), std::move(y)};
  }

 private:
  const WindowedDataset* data_;
  std::size_t batch_size_;
  RngStream rng_;
};

/// Mean one-step-ahead sample CRPS over the validation targets, in original
/// units. All windows are decoded together against a fixed noise stream, so
/// repeated calls on the same model return the same value.
inline double validation_crps(const VaeneuModel& model, const WindowedDataset& validation,
                              const NormalizationStats& stats, std::size_t num_samples,
                              std::uint64_t seed) {
  if (validation.empty()) throw DataError("validation split is empty");
  const std::size_t W = validation.size();
  const std::size_t L = model.latent_size();
  BatchSampler gather(validation, 1, RngStream(seed));
  std::vector<std::size_t> all(W);
  for (std::size_t i = 0; i < W; ++i) all[i] = i;
  const auto [hist, target] = gather.gather_batch(all);

  RngStream rng(seed, 0x7A11D);
  const Tensor rep = repeat_rows(model.represent_history(hist), num_samples);
  const Tensor z = standard_normal(rng, Shape{W * num_samples, L});
  const Tensor out = model.decode_representation(rep, z);

  double total = 0.0;
  std::vector<double> samples(num_samples);
  for (std::size_t w = 0; w < W; ++w) {
    for (std::size_t s = 0; s < num_samples; ++s) {
      const double v = out[w * num_samples + s];
      if (!std::isfinite(v)) throw TrainingError("validation forecast is not finite");
      samples[s] = stats.denormalize(v);
    }
    total += crps_samples(samples, stats.denormalize(target[w]));
  }
  return total / static_cast<double>(W);
}

struct TrainLogRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double kl = 0.0;
  double crps = 0.0;
  std::optional<double> val_crps;
  double ms_per_step = 0.0;
};

inline constexpr const char* kTrainLogHeader = "step,loss,kl,crps,val_crps,ms_per_step";

/// CSV log. Timing varies between runs, so it is only written when asked
/// for; otherwise the column is left empty and the log is reproducible.
inline std::string train_log_csv(const std::vector<TrainLogRecord>& log, bool with_timing) {
  std::string out = std::string(kTrainLogHeader) + "\n";
  for (const auto& r : log) {
    out += std::to_string(r.step) + ',' + detail::format_double(r.loss) + ',' +
           detail::format_double(r.kl) + ',' + detail::format_double(r.crps) + ',';
    if (r.val_crps) out += detail::format_double(*r.val_crps);
    out += ',';
    if (with_timing) out += detail::format_double(r.ms_per_step);
    out += '\n';
  }
  return out;
}

struct TrainResult {
  Checkpoint best;
  std::vector<TrainLogRecord> log;
  std::size_t steps_run = 0;
  bool stopped_early = false;
  double mean_ms_per_step = 0.0;
};

/// Global L2 rescaling of all gradients to at most `max_norm`.
inline void clip_gradients(std::map<std::string, Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, g] : grads)
    for (double v : g.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double f = max_norm / norm;
  for (auto& [_, g] : grads)
    for (double& v : g.values()) v *= f;
}

/// RMSProp training with early stopping on validation CRPS. Returns the
/// checkpoint of the best validation model seen.
inline TrainResult train(const ModelConfig& model_config, const SplitResult& split,
                         const TrainConfig& cfg) {
  cfg.validate();
  model_config.validate();
  if (split.train.empty()) throw DataError("training split is empty");
  if (split.validation.empty()) throw DataError("validation split is empty");
  const ModelConfig mc = model_config.resolved();
  if (split.train.history_size != mc.history_size) {
    throw ConfigError("dataset windows use history " + std::to_string(split.train.history_size) +
                      " but the model expects " + std::to_string(mc.history_size));
  }

  VaeneuModel model = VaeneuModel::initialize(mc, cfg.seed);
  OptimizerState opt;
  BatchSampler sampler(split.train, cfg.batch_size, RngStream(cfg.seed, 1));
  RngStream noise_rng(cfg.seed, 2);

  TrainResult result;
  result.best.model = mc;
  result.best.horizon = split.validation.size();
  result.best.stats = split.stats;
  result.best.parameters = model.parameters();
  result.best.best_validation_crps = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
  double total_ms = 0.0;

  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto [hist, target] = sampler.next();
    const ObjectiveNoise noise =
        ObjectiveNoise::draw(noise_rng, cfg.batch_size, mc.sample_size, mc.latent_size);

    Tape tape;
    const VaeneuModel tracked = model.tracked(tape);
    const ObjectiveValue obj = training_objective(tracked, hist, target, noise);
    const double loss = obj.loss.item();
    if (!std::isfinite(loss)) {
      throw TrainingError("non-finite training loss at step " + std::to_string(step) +
                          " (kl " + detail::format_double(obj.kl) + ", crps " +
                          detail::format_double(obj.crps) + ")");
    }
    const GradientMap grads = tape.backward(obj.loss);
    std::map<std::string, Tensor> g;
    tracked.for_each_parameter(
        [&](const std::string& name, const Tensor& p) { g.emplace(name, grads.of(p)); });
    if (cfg.grad_clip_norm > 0.0) clip_gradients(g, cfg.grad_clip_norm);
    rmsprop_step(model, g, opt, cfg);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    total_ms += ms;

    TrainLogRecord rec{step, loss, obj.kl, obj.crps, std::nullopt, ms};
    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      const double v = validation_crps(model, split.validation, split.stats,
                                       cfg.validation_samples, cfg.seed);
      rec.val_crps = v;
      if (v < result.best.best_validation_crps) {
        result.best.best_validation_crps = v;
        result.best.parameters = model.parameters();
        result.best.step = step;
        best_step = step;
      }
    }
    result.log.push_back(rec);
    result.steps_run = step;
    if (rec.val_crps && step - best_step >= cfg.patience_steps) {
      result.stopped_early = step < cfg.max_steps;
      break;
    }
  }
  result.mean_ms_per_step = total_ms / static_cast<double>(result.steps_run);
  return result;
}

}  // namespace vaeneu
