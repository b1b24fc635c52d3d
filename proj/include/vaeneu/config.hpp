#pragma once

// Experiment configuration: flat "section.key = value" lines, '#' starts a
// comment. Every problem found is reported together.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vaeneu/data.hpp"
#include "vaeneu/model.hpp"
#include "vaeneu/train.hpp"

namespace vaeneu {

enum class ImputeMethod { none, adjacent, locf };

struct ExperimentConfig {
  std::string dataset = "mackey-glass";
  std::size_t dataset_length = 20000;  // for generated data only
  ImputeMethod impute = ImputeMethod::none;
  std::size_t resample_factor = 1;

  BackboneKind backbone = BackboneKind::tcn;
  std::size_t history_size = 120;
  std::size_t horizon = 60;
  std::size_t sample_size = 8;
  double kl_weight = 1.0;

  TrainConfig train;
  std::size_t runs = 1;
  bool log_timing = false;

  std::size_t num_samples = 1000;
  std::size_t num_windows = 5;
  std::size_t quantile_levels = 99;

  bool generated_dataset() const { return dataset == "mackey-glass"; }

  ModelConfig model_config() const {
    ModelConfig m;
    m.backbone = backbone;
    m.history_size = history_size;
    m.sample_size = sample_size;
    m.kl_weight = kl_weight;
    return m;
  }

  /// Seed of run r (0-based).
  std::uint64_t run_seed(std::size_t r) const { return train.seed + r; }
};

namespace detail {

template <class T>
bool parse_number(std::string_view s, T& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

}  // namespace detail

/// Parses configuration text. `base_dir` resolves relative dataset paths.
inline ExperimentConfig parse_config(std::string_view text, const std::string& base_dir = "") {
  ExperimentConfig c;
  std::vector<std::string> errors;
  std::map<std::string, std::size_t> seen;

  auto size_field = [&](std::size_t& dst) {
    return [&dst](std::string_view v) {
      std::size_t x = 0;
      if (!detail::parse_number(v, x)) return std::string("expected a non-negative integer");
      dst = x;
      return std::string();
    };
  };
  auto real_field = [&](double& dst) {
    return [&dst](std::string_view v) {
      double x = 0;
      if (!detail::parse_double(v, x)) return std::string("expected a number");
      dst = x;
      return std::string();
    };
  };
  using Setter = std::function<std::string(std::string_view)>;
  const std::map<std::string, Setter> fields{
      {"dataset", [&](std::string_view v) { c.dataset = std::string(v); return std::string(); }},
      {"dataset.length", size_field(c.dataset_length)},
      {"preprocess.impute",
       [&](std::string_view v) {
         if (v == "none") c.impute = ImputeMethod::none;
         else if (v == "adjacent") c.impute = ImputeMethod::adjacent;
         else if (v == "locf") c.impute = ImputeMethod::locf;
         else return std::string("expected none, adjacent or locf");
         return std::string();
       }},
      {"preprocess.resample_factor", size_field(c.resample_factor)},
      {"model.backbone",
       [&](std::string_view v) {
         if (v != "rnn" && v != "tcn") return std::string("expected rnn or tcn");
         c.backbone = parse_backbone(v);
         return std::string();
       }},
      {"model.history_size", size_field(c.history_size)},
      {"model.horizon", size_field(c.horizon)},
      {"model.sample_size", size_field(c.sample_size)},
      {"model.kl_weight", real_field(c.kl_weight)},
      {"train.max_steps", size_field(c.train.max_steps)},
      {"train.patience_steps", size_field(c.train.patience_steps)},
      {"train.batch_size", size_field(c.train.batch_size)},
      {"train.learning_rate", real_field(c.train.learning_rate)},
      {"train.rmsprop_decay", real_field(c.train.rmsprop_decay)},
      {"train.rmsprop_epsilon", real_field(c.train.rmsprop_epsilon)},
      {"train.eval_every", size_field(c.train.eval_every)},
      {"train.validation_samples", size_field(c.train.validation_samples)},
      {"train.grad_clip_norm", real_field(c.train.grad_clip_norm)},
      {"train.seed",
       [&](std::string_view v) {
         if (!detail::parse_number(v, c.train.seed)) return std::string("expected an integer");
         return std::string();
       }},
      {"train.runs", size_field(c.runs)},
      {"train.log_timing",
       [&](std::string_view v) {
         if (v == "true") c.log_timing = true;
         else if (v == "false") c.log_timing = false;
         else return std::string("expected true or false");
         return std::string();
       }},
      {"eval.num_samples", size_field(c.num_samples)},
      {"eval.num_windows", size_field(c.num_windows)},
      {"eval.quantile_levels", size_field(c.quantile_levels)},
  };

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no);
    if (eq == std::string_view::npos) {
      errors.push_back(where + ": expected key = value");
      continue;
    }
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    auto f = fields.find(key);
    if (f == fields.end()) {
      errors.push_back(where + ": unknown key '" + key + "'");
      continue;
    }
    if (auto [it, fresh] = seen.emplace(key, line_no); !fresh) {
      errors.push_back(where + ": '" + key + "' already set on line " +
                       std::to_string(it->second));
      continue;
    }
    if (const std::string msg = f->second(value); !msg.empty()) {
      errors.push_back(key + ": " + msg + ", got '" + std::string(value) + "'");
    }
  }

  auto positive = [&](const char* key, double v) {
    if (!(v > 0)) errors.push_back(std::string(key) + ": must be positive");
  };
  positive("dataset.length", static_cast<double>(c.dataset_length));
  positive("preprocess.resample_factor", static_cast<double>(c.resample_factor));
  positive("model.history_size", static_cast<double>(c.history_size));
  positive("model.horizon", static_cast<double>(c.horizon));
  positive("model.sample_size", static_cast<double>(c.sample_size));
  positive("train.max_steps", static_cast<double>(c.train.max_steps));
  positive("train.patience_steps", static_cast<double>(c.train.patience_steps));
  positive("train.batch_size", static_cast<double>(c.train.batch_size));
  positive("train.learning_rate", c.train.learning_rate);
  positive("train.eval_every", static_cast<double>(c.train.eval_every));
  positive("train.validation_samples", static_cast<double>(c.train.validation_samples));
  positive("train.runs", static_cast<double>(c.runs));
  positive("eval.num_samples", static_cast<double>(c.num_samples));
  positive("eval.num_windows", static_cast<double>(c.num_windows));
  positive("eval.quantile_levels", static_cast<double>(c.quantile_levels));
  if (c.kl_weight < 0 || !std::isfinite(c.kl_weight)) {
    errors.push_back("model.kl_weight: must be finite and non-negative");
  }
  if (c.history_size > 0 && c.history_size < 8) {
    errors.push_back("model.history_size: must be at least 8");
  }
  if (c.train.eval_every > 0 && c.train.patience_steps < c.train.eval_every) {
    errors.push_back("train.patience_steps: must be at least train.eval_every");
  }
  if (!(c.train.rmsprop_decay >= 0.0 && c.train.rmsprop_decay < 1.0)) {
    errors.push_back("train.rmsprop_decay: must lie in [0, 1)");
  }
  if (c.train.rmsprop_epsilon < 0.0) errors.push_back("train.rmsprop_epsilon: must be >= 0");
  if (c.train.grad_clip_norm < 0.0) errors.push_back("train.grad_clip_norm: must be >= 0");
  if (c.dataset.empty()) {
    errors.push_back("dataset: must name a CSV file or mackey-glass");
  } else if (!c.generated_dataset()) {
    std::filesystem::path p(c.dataset);
    if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
    if (!std::filesystem::is_regular_file(p)) {
      errors.push_back("dataset: file '" + p.string() + "' does not exist");
    } else {
      c.dataset = p.string();
    }
  }

  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::filesystem::path(path).parent_path().string());
}

/// Loads (or generates) the series and applies the configured cleaning.
inline TimeSeries load_dataset(const ExperimentConfig& c) {
  TimeSeries ts = c.generated_dataset() ? mackey_glass_generate(c.dataset_length)
                                        : load_csv(c.dataset);
  if (c.generated_dataset()) ts.name = "mackey-glass";
  switch (c.impute) {
    case ImputeMethod::adjacent: ts = impute_adjacent_mean(std::move(ts)); break;
    case ImputeMethod::locf: ts = impute_locf(std::move(ts)); break;
    case ImputeMethod::none: break;
  }
  return aggregate_resample(std::move(ts), c.resample_factor);
}

inline SplitResult prepare_split(const ExperimentConfig& c) {
  return split_and_window(load_dataset(c), c.history_size, c.horizon, c.num_windows);
}

}  // namespace vaeneu
