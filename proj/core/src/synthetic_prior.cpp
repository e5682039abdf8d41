#include "mmpfn/synthetic_prior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "mmpfn/error.hpp"
#include "mmpfn/metrics.hpp"
#include "mmpfn/rng.hpp"

namespace mmpfn {

namespace {

enum class NodeActivation { identity, tanh, step };

double activate(NodeActivation a, double x) {
  switch (a) {
    case NodeActivation::identity:
      return x;
    case NodeActivation::tanh:
      return std::tanh(x);
    case NodeActivation::step:
      return x > 0.0 ? 1.0 : 0.0;
  }
  return x;
}

void check_range(const CountRange& r, const char* name, std::size_t floor) {
  if (r.min < floor || r.max < r.min) {
    throw ConfigError(std::string("prior.") + name + " must satisfy " + std::to_string(floor) +
                      " <= min <= max, got [" + std::to_string(r.min) + ", " +
                      std::to_string(r.max) + "]");
  }
}

// Standardizes each column in place; false when a column is constant.
bool standardize(std::vector<double>& x, std::size_t n, std::size_t f) {
  for (std::size_t j = 0; j < f; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i * f + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (x[i * f + j] - mean) * (x[i * f + j] - mean);
    var /= static_cast<double>(n);
    if (!(var > 1e-12)) return false;
    const double sd = std::sqrt(var);
    for (std::size_t i = 0; i < n; ++i) x[i * f + j] = (x[i * f + j] - mean) / sd;
  }
  return true;
}

bool train_covers_classes(const std::vector<std::size_t>& y, std::size_t n_train,
                          std::size_t n_classes) {
  std::vector<bool> seen(n_classes, false);
  for (std::size_t i = 0; i < n_train; ++i) seen[y[i]] = true;
  return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

std::size_t split_point(Rng& rng, const RealRange& fraction, std::size_t n) {
  const double frac = rng.uniform(fraction.min, fraction.max);
  const auto n_train = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
  return std::clamp<std::size_t>(n_train, 1, n - 1);
}

std::optional<SyntheticTask> draw_task(const PriorConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = rng.between(cfg.samples.min, cfg.samples.max);
  const std::size_t n_layers = rng.between(cfg.layers.min, cfg.layers.max);

  // Layered DAG. Layer 0 holds exogenous roots.
  std::vector<std::vector<std::size_t>> layers;
  std::size_t total = 0;
  for (std::size_t l = 0; l < n_layers && total < kMaxPriorNodes; ++l) {
    std::size_t width = rng.between(cfg.layer_width.min, cfg.layer_width.max);
    width = std::min(width, kMaxPriorNodes - total);
    std::vector<std::size_t> ids(width);
    std::iota(ids.begin(), ids.end(), total);
    total += width;
    layers.push_back(std::move(ids));
  }
  if (total < 2) return std::nullopt;

  std::vector<double> value(n * total, 0.0);  // [n, total]
  for (std::size_t node : layers[0]) {
    for (std::size_t i = 0; i < n; ++i) value[i * total + node] = rng.normal();
  }
  for (std::size_t l = 1; l < layers.size(); ++l) {
    const std::vector<std::size_t>& parents = layers[l - 1];
    for (std::size_t node : layers[l]) {
      std::vector<std::size_t> used;
      for (std::size_t p : parents) {
        if (rng.uniform() < 0.7) used.push_back(p);
      }
      if (used.empty()) used.push_back(parents[rng.below(parents.size())]);
      std::vector<double> w(used.size());
      const double scale = 1.0 / std::sqrt(static_cast<double>(used.size()));
      for (double& wi : w) wi = rng.normal(0.0, 1.5 * scale);
      const double bias = rng.normal(0.0, 0.3);
      const double noise = rng.uniform(cfg.noise.min, cfg.noise.max);
      const auto act = static_cast<NodeActivation>(rng.below(3));
      for (std::size_t i = 0; i < n; ++i) {
        double a = bias + noise * rng.normal();
        for (std::size_t k = 0; k < used.size(); ++k) a += w[k] * value[i * total + used[k]];
        value[i * total + node] = activate(act, a);
      }
    }
  }

  // Label from a non-root node when one exists; features from the rest.
  const std::size_t first_non_root = layers.size() > 1 ? layers[1].front() : 0;
  const std::size_t label_node = first_non_root + rng.below(total - first_non_root);
  std::vector<std::size_t> candidates;
  for (std::size_t v = 0; v < total; ++v) {
    if (v != label_node) candidates.push_back(v);
  }
  rng.shuffle(candidates);
  const std::size_t f = std::min(rng.between(cfg.features.min, cfg.features.max), candidates.size());
  candidates.resize(f);

  std::vector<double> x(n * f);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) x[i * f + j] = value[i * total + candidates[j]];
  }
  if (!standardize(x, n, f)) return std::nullopt;

  // Random quantile thresholds, then a random relabeling of the bins.
  const std::size_t k = rng.between(cfg.classes.min, cfg.classes.max);
  std::vector<double> target(n);
  for (std::size_t i = 0; i < n; ++i) target[i] = value[i * total + label_node];
  std::vector<double> sorted = target;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> levels(k - 1);
  for (double& q : levels) q = rng.uniform(0.15, 0.85);
  std::sort(levels.begin(), levels.end());
  std::vector<double> cuts;
  for (double q : levels) {
    cuts.push_back(sorted[static_cast<std::size_t>(q * static_cast<double>(n - 1))]);
  }
  const std::vector<std::size_t> relabel = permutation(k, rng);
  SyntheticTask task;
  task.n_classes = k;
  task.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto bin = static_cast<std::size_t>(
        std::upper_bound(cuts.begin(), cuts.end(), target[i]) - cuts.begin());
    task.labels[i] = relabel[bin];
  }
  task.n_train = split_point(rng, cfg.train_fraction, n);
  if (!train_covers_classes(task.labels, task.n_train, k)) return std::nullopt;
  task.features = Tensor({n, f}, std::move(x));
  return task;
}

}  // namespace

void PriorConfig::validate() const {
  check_range(features, "features", 1);
  check_range(samples, "samples", 2);
  check_range(classes, "classes", 2);
  check_range(layers, "layers", 1);
  check_range(layer_width, "layer_width", 1);
  if (layers.max > kMaxPriorLayers) {
    throw ConfigError("prior.layers.max must be <= " + std::to_string(kMaxPriorLayers));
  }
  if (!(noise.min >= 0.0 && noise.max >= noise.min)) {
    throw ConfigError("prior.noise must satisfy 0 <= min <= max");
  }
  if (!(train_fraction.min > 0.0 && train_fraction.max < 1.0 &&
        train_fraction.max >= train_fraction.min)) {
    throw ConfigError("prior.train_fraction must satisfy 0 < min <= max < 1");
  }
}

std::vector<std::size_t> SyntheticTask::train_labels() const {
  return {labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_train)};
}

std::vector<std::size_t> SyntheticTask::test_labels() const {
  return {labels.begin() + static_cast<std::ptrdiff_t>(n_train), labels.end()};
}

SyntheticTask sample_prior_dataset(const PriorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  for (std::size_t attempt = 0; attempt < kPriorRetries; ++attempt) {
    if (auto task = draw_task(cfg, derive_seed(seed, attempt))) return std::move(*task);
  }
  throw DataError("prior: no usable task after " + std::to_string(kPriorRetries) +
                  " draws for seed " + std::to_string(seed) +
                  " (constant label or feature, or a class missing from the train split)");
}

SyntheticTask linear_separable_task(std::size_t features, std::size_t n_train, std::size_t n_test,
                                    std::uint64_t seed) {
  if (features == 0 || n_train < 2 || n_test == 0) {
    throw ConfigError("linear task needs features >= 1, n_train >= 2, n_test >= 1");
  }
  const std::size_t n = n_train + n_test;
  for (std::size_t attempt = 0; attempt < kPriorRetries; ++attempt) {
    Rng rng(derive_seed(seed, attempt));
    std::vector<double> w(features);
    for (double& wi : w) wi = rng.normal();
    const double b = rng.normal(0.0, 0.3);
    std::vector<double> x(n * features);
    for (double& xi : x) xi = rng.normal();
    SyntheticTask task;
    task.n_classes = 2;
    task.n_train = n_train;
    task.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = b;
      for (std::size_t j = 0; j < features; ++j) s += w[j] * x[i * features + j];
      task.labels[i] = s > 0.0 ? 1 : 0;
    }
    if (!standardize(x, n, features) || !train_covers_classes(task.labels, n_train, 2)) continue;
    task.features = Tensor({n, features}, std::move(x));
    return task;
  }
  throw DataError("linear task: no draw with both classes in the train split for seed " +
                  std::to_string(seed));
}

Tensor task_logits(const SyntheticTask& task, const BackboneParams& backbone,
                   const TabularEncoderParams& encoder) {
  const RawTable table = numeric_table(task.features);
  std::vector<std::size_t> train_rows(task.n_train);
  std::iota(train_rows.begin(), train_rows.end(), 0);
  const TabularStats stats = fit_tabular_stats(table, train_rows);
  const Tensor tokens = tabular_encode(table, stats, encoder);
  const std::vector<std::size_t> train_labels = task.train_labels();
  return backbone_logits(tokens, train_labels, task.n_classes, backbone);
}

double in_context_accuracy(const SyntheticTask& task, const BackboneParams& backbone,
                           const TabularEncoderParams& encoder) {
  NoGradGuard no_grad;
  const Tensor probs = predict_proba(task_logits(task, backbone, encoder));
  const std::vector<std::size_t> truth = task.test_labels();
  return evaluate_accuracy(probs, truth);
}

std::vector<double> pretrain_backbone(const PriorConfig& prior, BackboneParams& backbone,
                                      const TabularEncoderParams& encoder,
                                      const PretrainConfig& cfg, const PretrainProgress& progress) {
  if (cfg.n_tasks == 0) throw ConfigError("pretraining needs n_tasks >= 1");
  prior.validate();
  if (prior.classes.max > backbone.config.max_classes) {
    throw ConfigError("prior.classes.max exceeds the backbone's max_classes");
  }
  const ParamList params = backbone.parameters();
  for (const NamedTensor& p : params) Tensor(p.tensor).set_requires_grad(true);
  OptimizerState state = OptimizerState::create(params, cfg.optimizer);
  std::vector<double> trace;
  trace.reserve(cfg.n_tasks);
  for (std::size_t t = 0; t < cfg.n_tasks; ++t) {
    const std::uint64_t task_seed = derive_seed(cfg.seed, t);
    const SyntheticTask task = sample_prior_dataset(prior, task_seed);
    GradTape tape;
    const Tensor logits = task_logits(task, backbone, encoder);
    const std::vector<std::size_t> query_labels = task.test_labels();
    const Tensor loss = cross_entropy(logits, query_labels);
    if (!std::isfinite(loss.item())) {
      throw NumericError("pretraining loss is not finite at task " + std::to_string(t) +
                         " (task seed " + std::to_string(task_seed) + ")");
    }
    tape.backward(loss);
    adamw_step(params, state, cfg.learning_rate);
    trace.push_back(loss.item());
    if (progress) progress(t, loss.item());
  }
  return trace;
}

}  // namespace mmpfn
