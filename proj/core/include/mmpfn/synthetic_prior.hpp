#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mmpfn/backbone.hpp"
#include "mmpfn/encoders.hpp"
#include "mmpfn/optim.hpp"

namespace mmpfn {

// Inclusive integer range.
struct CountRange {
  std::size_t min = 1;
  std::size_t max = 1;

  friend bool operator==(const CountRange&, const CountRange&) = default;
};

struct RealRange {
  double min = 0.0;
  double max = 0.0;

  friend bool operator==(const RealRange&, const RealRange&) = default;
};

// Random structural causal model family. Each task draws a layered DAG of
// scalar nodes (at most 16 nodes over at most 3 layers); every non-root node
// is act(w . parents + b + noise) with act from {identity, tanh, step}.
struct PriorConfig {
  CountRange features{2, 8};
  CountRange samples{48, 112};
  CountRange classes{2, 3};
  CountRange layers{2, 3};
  CountRange layer_width{2, 6};
  RealRange noise{0.01, 0.3};
  RealRange train_fraction{0.5, 0.8};
  std::uint64_t seed = 0;

  // Throws ConfigError on empty ranges, zero minima or fewer than 2 classes.
  void validate() const;

  friend bool operator==(const PriorConfig&, const PriorConfig&) = default;
};

inline constexpr std::size_t kMaxPriorNodes = 16;
inline constexpr std::size_t kMaxPriorLayers = 3;
inline constexpr std::size_t kPriorRetries = 64;

struct SyntheticTask {
  Tensor features;  // [n, f], standardized per column over all n rows
  std::vector<std::size_t> labels;
  std::size_t n_train = 0;  // rows [0, n_train) are the labeled context
  std::size_t n_classes = 2;

  std::size_t rows() const { return labels.size(); }
  std::vector<std::size_t> train_labels() const;
  std::vector<std::size_t> test_labels() const;
};

// Deterministic in (cfg, seed); cfg.seed is ignored here. Degenerate draws
// (a constant column, a class missing from the train split) are redrawn up
// to kPriorRetries times before a DataError.
SyntheticTask sample_prior_dataset(const PriorConfig& cfg, std::uint64_t seed);

// Held-out check task: y = [w . x + b > 0] with x ~ N(0, I), features
// standardized like prior tasks and both classes present in the train split.
SyntheticTask linear_separable_task(std::size_t features, std::size_t n_train, std::size_t n_test,
                                    std::uint64_t seed);

// Encodes the task's features with the frozen tabular encoder and runs the
// backbone; logits for the query rows.
Tensor task_logits(const SyntheticTask& task, const BackboneParams& backbone,
                   const TabularEncoderParams& encoder);

double in_context_accuracy(const SyntheticTask& task, const BackboneParams& backbone,
                           const TabularEncoderParams& encoder);

struct PretrainConfig {
  std::size_t n_tasks = 20000;
  double learning_rate = 3e-4;
  AdamWConfig optimizer;
  std::uint64_t seed = 0;

  friend bool operator==(const PretrainConfig& a, const PretrainConfig& b) {
    return a.n_tasks == b.n_tasks && a.learning_rate == b.learning_rate &&
           a.optimizer.weight_decay == b.optimizer.weight_decay && a.seed == b.seed;
  }
};

// Task i is sample_prior_dataset(prior, derive_seed(cfg.seed, i)).
using PretrainProgress = std::function<void(std::size_t task, double loss)>;

// One optimizer step per task on the query-row cross-entropy. Updates the
// backbone in place and returns the per-task loss trace. A non-finite loss
// throws NumericError quoting the task seed.
std::vector<double> pretrain_backbone(const PriorConfig& prior, BackboneParams& backbone,
                                      const TabularEncoderParams& encoder,
                                      const PretrainConfig& cfg,
                                      const PretrainProgress& progress = {});

}  // namespace mmpfn
