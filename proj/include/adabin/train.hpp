#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "adabin/bundle.hpp"
#include "adabin/checkpoint.hpp"
#include "adabin/config.hpp"
#include "adabin/data.hpp"

namespace adabin {

/// Seed of the stratified train/test subsets. It is independent of the run
/// seed so that every seed of an experiment sees the same examples.
inline constexpr std::uint64_t kSubsetSeed = 0x5eedULL;

/// Loads the configured dataset and applies the configured subsets.
DatasetPair prepare_data(const RunConfig& cfg);
/// Applies the configured subsets to already loaded data.
DatasetPair apply_subsets(const RunConfig& cfg, const DatasetPair& full);

struct LayerQuantState {
  std::string name;
  float alpha_a = 1.0f;
  float beta_a = 0.0f;
};

struct EpochMetrics {
  int epoch = 0;  ///< 1-based
  double train_loss = 0.0;
  double test_acc = 0.0;
  float lr = 0.0f;
  std::vector<LayerQuantState> layers;

  /// One JSON object on a single line.
  std::string to_json() const;
};

struct EvalReport {
  std::size_t count = 0;
  double top1 = 0.0;
  std::vector<double> per_class;         ///< accuracy per label
  std::vector<std::size_t> class_count;  ///< examples per label
  std::vector<int> predictions;
  Tensor logits;  ///< [N, classes], only when requested

  std::string to_json() const;
};

EvalReport evaluate(Model& model, const Dataset& ds, std::size_t batch = 250,
                    bool keep_logits = false);
EvalReport evaluate_packed(const PackedModel& pm, const Dataset& ds, std::size_t batch = 250,
                           bool keep_logits = false);

struct TrainOptions {
  bool resume = false;       ///< continue from <out>/last.ckpt
  int stop_after = 0;        ///< stop after this many epochs in this call (0 = run to the end)
  std::ostream* log = nullptr;  ///< human-readable progress
};

struct TrainResult {
  std::vector<EpochMetrics> history;  ///< epochs run by this call
  double best_acc = 0.0;
  double final_acc = 0.0;
  /// Mean loss of the first and last minibatch of the run.
  double first_step_loss = 0.0;
  double last_step_loss = 0.0;
};

/// Runs the schedule, writing config.txt, metrics.jsonl, last.ckpt and
/// best.ckpt under cfg.out.
TrainResult train(const RunConfig& cfg, const DatasetPair& data, const TrainOptions& opt = {});

}  // namespace adabin
