#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmpfn/imbalance.hpp"
#include "mmpfn/model.hpp"
#include "mmpfn/synthetic_prior.hpp"
#include "mmpfn/tasks.hpp"
#include "mmpfn/train.hpp"

namespace mmpfn {

// Tabular CSV plus row-aligned embedding files.
struct CsvSource {
  std::string path;
  std::vector<ColumnSpec> columns;  // empty categorical vocabularies are filled from the data
  std::string label;
  std::vector<std::string> classes;  // empty: sorted distinct label values
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
  std::vector<std::pair<std::string, std::string>> embeddings;  // modality -> MMPE path

  friend bool operator==(const CsvSource&, const CsvSource&) = default;
};

struct ViewSpec {
  std::string name;
  bool tabular = true;
  std::vector<std::string> modalities;

  friend bool operator==(const ViewSpec&, const ViewSpec&) = default;
};

struct ModelSection {
  BackboneConfig backbone;
  std::size_t max_categories = 32;
  std::uint64_t seed = 0;
  bool use_tabular = true;
  std::string pretrained;  // optional pretraining checkpoint

  friend bool operator==(const ModelSection&, const ModelSection&) = default;
};

struct PretrainSection {
  PriorConfig prior;
  PretrainConfig run;
  std::size_t eval_tasks = 50;
  std::size_t eval_features = 4;
  std::size_t eval_train = 64;
  std::size_t eval_test = 32;

  friend bool operator==(const PretrainSection&, const PretrainSection&) = default;
};

struct ImbalanceSection {
  std::string modality = "image";
  std::size_t probe_block = 0;
  std::vector<ProjectorVariant> grid;

  friend bool operator==(const ImbalanceSection&, const ImbalanceSection&) = default;
};

struct ExperimentConfig {
  std::optional<TaskSpec> synthetic_task;
  std::optional<CsvSource> csv_task;
  ModelSection model;
  std::vector<std::pair<std::string, ProjectorVariant>> projectors;  // per modality
  FineTuneConfig training;
  std::vector<ViewSpec> views;  // empty: a single view with every configured view
  PretrainSection pretrain;
  ImbalanceSection imbalance;
  std::vector<ImbalanceSpec> monte_carlo;
  std::size_t probe_block = 0;
  std::size_t similarity_block = 0;
  std::string eval_checkpoint;
  std::string output_dir = "results";

  // Directory that relative paths are resolved against; not serialized.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& relative) const;
};

// Strict parse: unknown keys, missing required keys and type errors throw
// ConfigError naming the JSON path. Defaults are filled for absent keys.
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::filesystem::path& base_dir = {});
ExperimentConfig parse_config(const std::filesystem::path& path);

// Canonical JSON with every default spelled out; parse(emit(c)) == c.
std::string emit_config(const ExperimentConfig& cfg);

// Checks what `command` needs: a task source, existing input files, a grid,
// and so on. Throws ConfigError.
void validate_for(const ExperimentConfig& cfg, const std::string& command);

// Model spec for one view of the dataset: tabular as configured, one
// projector per modality listed in the view.
ModelSpec model_spec_for(const ExperimentConfig& cfg, const MultimodalDataset& data,
                         const ViewSpec& view);

// The synthetic task, or the CSV + embedding files.
MultimodalDataset load_dataset(const ExperimentConfig& cfg);

// Configured views, or the default single view "full".
std::vector<ViewSpec> effective_views(const ExperimentConfig& cfg);

}  // namespace mmpfn
