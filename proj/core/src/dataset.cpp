#include "mmpfn/dataset.hpp"

#include <set>

#include "mmpfn/error.hpp"

namespace mmpfn {

const EmbeddingSet& MultimodalDataset::modality(const std::string& modality_name) const {
  for (const EmbeddingSet& m : modalities) {
    if (m.modality == modality_name) return m;
  }
  throw DataError("dataset '" + name + "' has no modality '" + modality_name + "'");
}

void MultimodalDataset::validate() const {
  const std::size_t n = rows();
  if (n == 0) throw DataError("dataset '" + name + "' has no rows");
  if (n_classes < 2) throw DataError("dataset '" + name + "' needs at least 2 classes");
  if (!has_tabular() && modalities.empty()) {
    throw DataError("dataset '" + name + "' has neither tabular columns nor modalities");
  }
  if (has_tabular()) {
    tabular.validate();
    if (tabular.rows != n) {
      throw DataError("tabular view has " + std::to_string(tabular.rows) + " rows, labels have " +
                      std::to_string(n));
    }
  }
  std::set<std::string> names;
  for (const EmbeddingSet& m : modalities) {
    if (!names.insert(m.modality).second) {
      throw DataError("duplicate modality name '" + m.modality + "'");
    }
    if (m.count != n) {
      throw DataError("modality '" + m.modality + "' has " + std::to_string(m.count) +
                      " rows, labels have " + std::to_string(n));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= n_classes) {
      throw DataError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                      " is outside [0, " + std::to_string(n_classes) + ")");
    }
  }
  std::set<std::size_t> seen;
  for (const auto* split : {&train_rows, &test_rows}) {
    for (std::size_t r : *split) {
      if (r >= n) throw DataError("split row " + std::to_string(r) + " is out of range");
      if (!seen.insert(r).second) {
        throw DataError("row " + std::to_string(r) + " appears twice across the splits");
      }
    }
  }
  if (train_rows.empty() || test_rows.empty()) {
    throw DataError("dataset '" + name + "' needs nonempty train and test splits");
  }
}

MultimodalDataset MultimodalDataset::select_views(bool tabular_view,
                                                  const std::vector<std::string>& names) const {
  MultimodalDataset out;
  out.name = name;
  out.labels = labels;
  out.n_classes = n_classes;
  out.train_rows = train_rows;
  out.test_rows = test_rows;
  if (tabular_view) {
    out.tabular = tabular;
  } else {
    out.tabular.rows = tabular.rows;
  }
  for (const std::string& m : names) out.modalities.push_back(modality(m));
  out.validate();
  return out;
}

}  // namespace mmpfn
