#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmpfn/csv.hpp"
#include "mmpfn/embedding_file.hpp"
#include "mmpfn/nn.hpp"

namespace mmpfn {

enum class ColumnKind { numeric, categorical };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  std::vector<std::string> vocabulary;  // categorical only; order defines codes

  friend bool operator==(const ColumnSpec&, const ColumnSpec&) = default;
};

// Typed raw cells. Numeric missing = NaN, categorical missing = "".
struct RawColumn {
  std::vector<double> numbers;
  std::vector<std::string> labels;
};

struct RawTable {
  std::vector<ColumnSpec> specs;
  std::vector<RawColumn> columns;
  std::size_t rows = 0;

  // Throws DataError on inconsistent column lengths, duplicate names or empty
  // categorical vocabularies.
  void validate() const;
};

// Reads the spec'd columns of a CSV. Empty, "NA" and "nan" cells are missing.
RawTable table_from_csv(const CsvTable& csv, const std::vector<ColumnSpec>& specs);

// A numeric-only table from a dense [rows x columns] matrix.
RawTable numeric_table(const Tensor& values, const std::string& name_prefix = "x");

// Frozen per-cell tokenizer shared by every feature: numeric cells map to
// z * numeric_weight + numeric_bias, categorical codes index category_table,
// missing values map to missing_token.
struct TabularEncoderParams {
  Tensor numeric_weight;  // [d]
  Tensor numeric_bias;    // [d]
  Tensor missing_token;   // [d]
  Tensor category_table;  // [max_categories, d]

  static TabularEncoderParams create(std::size_t model_dim, std::size_t max_categories,
                                     std::uint64_t seed);
  std::size_t model_dim() const { return numeric_weight.dim(0); }
  std::size_t max_categories() const { return category_table.dim(0); }
  void collect(const std::string& prefix, ParamList& out) const;
};

// Per-column z-scoring statistics over the training rows.
struct TabularStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

// Population mean/stddev of non-missing train cells; a zero or undefined
// spread becomes 1. Rejects train cells outside a categorical vocabulary.
TabularStats fit_tabular_stats(const RawTable& table, std::span<const std::size_t> train_rows);

struct EncodeDiagnostics {
  std::size_t unseen_categories = 0;  // mapped to the missing token
  std::size_t capped_categories = 0;  // code beyond max_categories
};

// [rows, columns, d] tokens for every row. The result never requires
// gradients: the encoder is frozen.
Tensor tabular_encode(const RawTable& table, const TabularStats& stats,
                      const TabularEncoderParams& params, EncodeDiagnostics* diagnostics = nullptr);

// Test double for a frozen foundation encoder: a fixed random injective map
// latent[n, L] -> R^dim, out = B tanh(A z + a) + C z, plus N(0, noise^2).
// The map depends only on (seed, L, dim); the noise on seed as well.
EmbeddingSet synthetic_embedding_provider(const Tensor& latent, std::size_t dim, double noise_scale,
                                          std::uint64_t seed, const std::string& modality = "image");

}  // namespace mmpfn
