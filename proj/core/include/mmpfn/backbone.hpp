#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mmpfn/attention_mass.hpp"
#include "mmpfn/nn.hpp"
#include "mmpfn/ops.hpp"

namespace mmpfn {

struct BackboneConfig {
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t blocks = 3;
  std::size_t mlp_hidden_mult = 2;
  std::size_t max_classes = 10;

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

// One 2D block: attention across the tokens of a sample, then attention across
// samples within each column. Every sublayer is pre-norm with a residual.
struct BlockParams {
  LayerNormParams feature_norm;
  AttentionParams feature_attention;
  LayerNormParams feature_mlp_norm;
  MlpParams feature_mlp;
  LayerNormParams sample_norm;
  AttentionParams sample_attention;
  LayerNormParams sample_mlp_norm;
  MlpParams sample_mlp;

  static BlockParams create(const BackboneConfig& cfg, ParamFactory& factory);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct BackboneParams {
  BackboneConfig config;
  Tensor label_embedding;  // [max_classes, d], one learned token per class
  Tensor placeholder;      // [1, d], label token of every query row
  std::vector<BlockParams> blocks;
  LayerNormParams decoder_norm;
  MlpParams decoder;  // d -> hidden -> max_classes

  static BackboneParams create(const BackboneConfig& cfg, std::uint64_t seed);
  ParamList parameters(const std::string& prefix = "backbone") const;
};

// tokens[S, F + 1, d]: S = n_train + n_test samples (train rows first), F
// feature tokens plus one label token per sample in the last column.
struct CellGrid {
  Tensor tokens;
  std::size_t n_train = 0;
  std::size_t n_test = 0;

  std::size_t samples() const { return n_train + n_test; }
  std::size_t n_features() const { return tokens.dim(1) - 1; }
  std::size_t model_dim() const { return tokens.dim(2); }
};

// Appends the label column to a fused token table[S, F, d].
CellGrid embed_cells(const Tensor& table, std::span<const std::size_t> train_labels,
                     std::size_t n_classes, const BackboneParams& params);

// Row = query sample, column = key sample. Every row may attend exactly to the
// training columns.
BoolMatrix build_incontext_mask(std::size_t n_train, std::size_t n_test);

CellGrid pfn_block(const CellGrid& grid, const BoolMatrix& mask, const BlockParams& params,
                   AttentionWeights* feature_weights = nullptr,
                   AttentionWeights* sample_weights = nullptr);

// Optional instrumentation for run_blocks.
struct BlockCapture {
  std::size_t block = 0;
  AttentionWeights feature_weights;  // filled for `block`
  AttentionWeights sample_weights;   // filled for `block`
  Tensor block_output;               // tokens after `block`
};

CellGrid run_blocks(const CellGrid& grid, const BoolMatrix& mask, const BackboneParams& params,
                    BlockCapture* capture = nullptr);

// Logits[n_test, n_classes] read from the label tokens of the query rows.
Tensor decode(const CellGrid& grid, const BackboneParams& params, std::size_t n_classes);

// Row-wise softmax of logits.
Tensor predict_proba(const Tensor& logits);

// Embed, run every block and decode.
Tensor backbone_logits(const Tensor& table, std::span<const std::size_t> train_labels,
                       std::size_t n_classes, const BackboneParams& params);

struct PartitionCell {
  std::string name;
  std::vector<std::size_t> features;
};

// Feature-index sets per modality, as produced by token fusion.
struct TokenPartition {
  std::vector<PartitionCell> cells;

  std::size_t feature_count() const;
  // Throws ShapeError unless the cells cover [0, n_features) exactly once.
  void validate(std::size_t n_features) const;
};

// Mean over samples, heads and query tokens of the feature-stage attention
// mass landing on each partition cell at `block`; the label token is reported
// as its own breakdown entry named "label". empirical_mass is the total on
// every cell other than "tabular"; predicted_mass is the equal-weight
// expectation over the same token counts (label counted as tabular).
AttentionMassReport attention_mass_probe(const CellGrid& grid, const BoolMatrix& mask,
                                         const BackboneParams& params,
                                         const TokenPartition& partition, std::size_t block = 0);

}  // namespace mmpfn
