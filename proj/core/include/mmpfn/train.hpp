#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mmpfn/model.hpp"
#include "mmpfn/optim.hpp"

namespace mmpfn {

// Learning rate for a step given the base rate. Empty means constant.
using LrSchedule = std::function<double(std::size_t step, double base_lr)>;

struct FineTuneConfig {
  double learning_rate = 1e-5;
  std::size_t batch_size = 1;  // tables per optimizer step
  std::size_t steps = 100;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double weight_decay = 0.01;
  double context_fraction = 0.8;  // per-step context share of the train rows
  LrSchedule schedule;

  // Throws ConfigError on a non-positive rate, zero batch, empty seed list or
  // a context fraction outside (0, 1).
  void validate() const;
};

struct SeedResult {
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::vector<double> loss_trace;  // one entry per step
  Tensor probabilities;            // [test rows, n_classes] of the final model
  std::uint64_t frozen_digest = 0;
};

struct RunResult {
  std::vector<SeedResult> seeds;

  std::vector<double> accuracies() const;
  double mean_accuracy() const;
};

// The context/query split of step `step`: a seeded shuffle of the train rows
// cut at round(context_fraction * n), keeping at least one row on each side.
struct StepSplit {
  std::vector<std::size_t> context;
  std::vector<std::size_t> query;
};
StepSplit step_split(std::span<const std::size_t> train_rows, double context_fraction,
                     std::uint64_t seed, std::size_t step, std::size_t table);

// Inference with the full train split as context and the test rows as queries.
Tensor predict_test(const MultimodalModel& model, const MultimodalDataset& data);

// Fine-tunes the projectors and backbone in place for one seed. Each step
// draws batch_size context/query splits of the train rows, averages the query
// cross-entropy and takes one AdamW step. Throws StateError if a frozen
// parameter receives a gradient or changes.
SeedResult fine_tune(MultimodalModel& model, const MultimodalDataset& data,
                     const FineTuneConfig& cfg, std::uint64_t seed);

}  // namespace mmpfn
