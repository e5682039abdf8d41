#include "mmpfn/train.hpp"

#include <cmath>
#include <numeric>

#include "mmpfn/error.hpp"
#include "mmpfn/metrics.hpp"
#include "mmpfn/rng.hpp"

namespace mmpfn {

void FineTuneConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("training.learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("training.batch_size must be >= 1");
  if (seeds.empty()) throw ConfigError("training.seeds must not be empty");
  if (!(weight_decay >= 0.0)) throw ConfigError("training.weight_decay must be >= 0");
  if (!(context_fraction > 0.0 && context_fraction < 1.0)) {
    throw ConfigError("training.context_fraction must be in (0, 1)");
  }
}

std::vector<double> RunResult::accuracies() const {
  std::vector<double> out;
  for (const SeedResult& s : seeds) out.push_back(s.accuracy);
  return out;
}

double RunResult::mean_accuracy() const {
  if (seeds.empty()) return std::nan("");
  double total = 0.0;
  for (const SeedResult& s : seeds) total += s.accuracy;
  return total / static_cast<double>(seeds.size());
}

StepSplit step_split(std::span<const std::size_t> train_rows, double context_fraction,
                     std::uint64_t seed, std::size_t step, std::size_t table) {
  const std::size_t n = train_rows.size();
  if (n < 2) throw DataError("fine-tuning needs at least 2 training rows");
  std::vector<std::size_t> rows(train_rows.begin(), train_rows.end());
  Rng rng(derive_seed(derive_seed(seed, step), table));
  rng.shuffle(rows);
  auto cut = static_cast<std::size_t>(std::llround(context_fraction * static_cast<double>(n)));
  cut = std::clamp<std::size_t>(cut, 1, n - 1);
  StepSplit split;
  split.context.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(cut));
  split.query.assign(rows.begin() + static_cast<std::ptrdiff_t>(cut), rows.end());
  return split;
}

Tensor predict_test(const MultimodalModel& model, const MultimodalDataset& data) {
  NoGradGuard no_grad;
  return predict_proba(model.logits(data, data.train_rows, data.test_rows));
}

SeedResult fine_tune(MultimodalModel& model, const MultimodalDataset& data,
                     const FineTuneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  data.validate();
  model.check_compatible(data);
  if (data.train_rows.size() < 2) throw DataError("fine-tuning needs at least 2 training rows");

  const ParamList trainable = model.trainable_parameters();
  const ParamList frozen = model.frozen_parameters();
  for (const NamedTensor& p : trainable) {
    Tensor(p.tensor).set_requires_grad(true);
    Tensor(p.tensor).zero_grad();
  }
  for (const NamedTensor& p : frozen) Tensor(p.tensor).set_requires_grad(false);
  const std::uint64_t frozen_before = parameter_digest(frozen);

  AdamWConfig opt;
  opt.weight_decay = cfg.weight_decay;
  OptimizerState state = OptimizerState::create(trainable, opt);
  SeedResult result;
  result.seed = seed;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    double step_loss = 0.0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const StepSplit split = step_split(data.train_rows, cfg.context_fraction, seed, step, b);
      std::vector<std::size_t> query_labels;
      for (std::size_t r : split.query) query_labels.push_back(data.labels[r]);
      GradTape tape;
      const Tensor loss = cross_entropy(model.logits(data, split.context, split.query), query_labels);
      if (!std::isfinite(loss.item())) {
        throw NumericError("fine-tuning loss is not finite at step " + std::to_string(step) +
                           " (seed " + std::to_string(seed) + ")");
      }
      tape.backward(scale(loss, 1.0 / static_cast<double>(cfg.batch_size)));
      step_loss += loss.item() / static_cast<double>(cfg.batch_size);
    }
    for (const NamedTensor& p : frozen) {
      if (p.tensor.has_grad()) {
        throw StateError("frozen parameter '" + p.name + "' received a gradient");
      }
    }
    const double lr = cfg.schedule ? cfg.schedule(step, cfg.learning_rate) : cfg.learning_rate;
    adamw_step(trainable, state, lr);
    result.loss_trace.push_back(step_loss);
  }
  result.frozen_digest = parameter_digest(frozen);
  if (result.frozen_digest != frozen_before) {
    throw StateError("frozen parameters changed during fine-tuning");
  }
  result.probabilities = predict_test(model, data);
  std::vector<std::size_t> test_labels;
  for (std::size_t r : data.test_rows) test_labels.push_back(data.labels[r]);
  result.accuracy = evaluate_accuracy(result.probabilities, test_labels);
  return result;
}

}  // namespace mmpfn
