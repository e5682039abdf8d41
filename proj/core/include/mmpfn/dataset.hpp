#pragma once

#include <string>
#include <vector>

#include "mmpfn/embedding_file.hpp"
#include "mmpfn/encoders.hpp"

namespace mmpfn {

// Row-aligned views of one classification dataset: a tabular table (possibly
// without columns) and one embedding set per non-tabular modality.
struct MultimodalDataset {
  std::string name;
  RawTable tabular;
  std::vector<EmbeddingSet> modalities;
  std::vector<std::size_t> labels;
  std::size_t n_classes = 2;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;

  std::size_t rows() const { return labels.size(); }
  bool has_tabular() const { return !tabular.columns.empty(); }
  const EmbeddingSet& modality(const std::string& modality_name) const;

  // Throws DataError on misaligned views, out-of-range labels or indices,
  // overlapping splits, duplicate modality names or an empty view set.
  void validate() const;

  // Keeps the tabular view when `tabular` is set and the named modalities in
  // the given order.
  MultimodalDataset select_views(bool tabular, const std::vector<std::string>& names) const;
};

}  // namespace mmpfn
