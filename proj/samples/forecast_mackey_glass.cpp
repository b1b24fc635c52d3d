// Trains a small TCN forecaster on a generated Mackey-Glass series and prints
// a 90% prediction interval for the first test window next to the truth.
//
//   forecast_mackey_glass [steps]

#include <cstdio>
#include <string>

#include "vaeneu/vaeneu.hpp"

int main(int argc, char** argv) {
  using namespace vaeneu;
  const std::size_t steps = argc > 1 ? std::stoul(argv[1]) : 1000;

  const TimeSeries series = mackey_glass_generate(20000);
  const SplitResult split = split_and_window(series, 120, 60);

  ModelConfig model;
  model.backbone = BackboneKind::tcn;
  model.history_size = 120;
  TrainConfig cfg;
  cfg.max_steps = steps;
  cfg.seed = 1;
  const TrainResult trained = train(model, split, cfg);
  std::printf("best validation CRPS %.5f at step %zu\n", trained.best.best_validation_crps,
              trained.best.step);

  const TrainedModel tm = TrainedModel::from_checkpoint(trained.best);
  const TestWindow& window = split.test.front();
  const ForecastPaths paths = forecast_paths(tm, window.history, 60, 1000, 7);
  const auto table = summarize_quantiles(paths, {0.05, 0.5, 0.95});
  std::printf("%4s %9s %9s %9s %9s\n", "step", "q05", "median", "q95", "truth");
  for (std::size_t s = 0; s < 60; s += 5) {
    std::printf("%4zu %9.4f %9.4f %9.4f %9.4f\n", s + 1, table[s][0], table[s][1], table[s][2],
                window.truth[s]);
  }
  const WindowEvaluation ev = evaluate_windows(model_forecaster(tm), split.test, 60, 1000, 7);
  const WindowEvaluation clim =
      evaluate_windows(climatology_forecaster(split.train_values), split.test, 60, 1000, 7);
  std::printf("test CRPS %.5f (climatology %.5f)\n", ev.mean_crps, clim.mean_crps);
}
