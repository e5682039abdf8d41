#include "mmpfn/tasks.hpp"

#include <cmath>
#include <numeric>

#include "mmpfn/error.hpp"
#include "mmpfn/rng.hpp"

namespace mmpfn {

namespace {

RawTable numeric_columns(const std::vector<std::vector<double>>& columns, std::size_t rows) {
  RawTable table;
  table.rows = rows;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    table.specs.push_back({"x" + std::to_string(j), ColumnKind::numeric, {}});
    table.columns.push_back({columns[j], {}});
  }
  return table;
}

EmbeddingSet embed(const std::vector<double>& latent, const TaskSpec& spec, std::uint64_t stream,
                   const std::string& name) {
  const Tensor z({latent.size()}, latent);
  return synthetic_embedding_provider(z, spec.embed_dim, spec.embed_noise,
                                      derive_seed(spec.seed, stream), name);
}

}  // namespace

const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::xor_bits:
      return "xor";
    case TaskKind::shared_signal:
      return "shared_signal";
    case TaskKind::three_signal:
      return "three_signal";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "xor") return TaskKind::xor_bits;
  if (name == "shared_signal") return TaskKind::shared_signal;
  if (name == "three_signal") return TaskKind::three_signal;
  throw ConfigError("unknown task kind '" + name + "' (expected xor, shared_signal or three_signal)");
}

void TaskSpec::validate() const {
  if (n_train < 2 || n_test < 1) throw ConfigError("task needs n_train >= 2 and n_test >= 1");
  if (tabular_width < 1) throw ConfigError("task.tabular_width must be >= 1");
  if (embed_dim < 1) throw ConfigError("task.embed_dim must be >= 1");
  if (!(embed_noise >= 0.0)) throw ConfigError("task.embed_noise must be >= 0");
}

MultimodalDataset make_task(const TaskSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_train + spec.n_test;
  Rng rng(derive_seed(spec.seed, 0));
  MultimodalDataset data;
  data.name = to_string(spec.kind);
  data.n_classes = 2;
  data.labels.resize(n);
  std::vector<std::vector<double>> columns(spec.tabular_width, std::vector<double>(n));

  switch (spec.kind) {
    case TaskKind::xor_bits: {
      std::vector<double> latent(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t tab_bit = rng.below(2);
        const std::size_t img_bit = rng.below(2);
        columns[0][i] = static_cast<double>(tab_bit) + rng.normal(0.0, 0.1);
        for (std::size_t j = 1; j < spec.tabular_width; ++j) columns[j][i] = rng.normal();
        latent[i] = (img_bit ? 1.0 : -1.0) + rng.normal(0.0, 0.1);
        data.labels[i] = tab_bit ^ img_bit;
      }
      data.modalities.push_back(embed(latent, spec, 1, "image"));
      break;
    }
    case TaskKind::shared_signal: {
      std::vector<double> latent(n);
      const double norm = 1.0 / std::sqrt(static_cast<double>(spec.tabular_width));
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < spec.tabular_width; ++j) {
          columns[j][i] = rng.normal();
          s += columns[j][i];
        }
        latent[i] = rng.normal();
        data.labels[i] = s * norm + latent[i] > 0.0 ? 1 : 0;
      }
      data.modalities.push_back(embed(latent, spec, 1, "image"));
      break;
    }
    case TaskKind::three_signal: {
      std::vector<double> image(n), text(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < spec.tabular_width; ++j) columns[j][i] = rng.normal();
        image[i] = rng.normal();
        text[i] = rng.normal();
        data.labels[i] = columns[0][i] + 1.5 * image[i] + text[i] > 0.0 ? 1 : 0;
      }
      data.modalities.push_back(embed(image, spec, 1, "image"));
      data.modalities.push_back(embed(text, spec, 2, "text"));
      break;
    }
  }
  data.tabular = numeric_columns(columns, n);
  data.train_rows.resize(spec.n_train);
  std::iota(data.train_rows.begin(), data.train_rows.end(), 0);
  data.test_rows.resize(spec.n_test);
  std::iota(data.test_rows.begin(), data.test_rows.end(), spec.n_train);
  data.validate();
  return data;
}

}  // namespace mmpfn
