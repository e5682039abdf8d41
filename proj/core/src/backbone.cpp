#include "mmpfn/backbone.hpp"

#include <algorithm>

#include "mmpfn/error.hpp"
#include "mmpfn/rng.hpp"

namespace mmpfn {

BlockParams BlockParams::create(const BackboneConfig& cfg, ParamFactory& factory) {
  const std::size_t d = cfg.model_dim;
  const std::size_t hidden = cfg.mlp_hidden_mult * d;
  BlockParams b;
  b.feature_norm = LayerNormParams::create(d);
  b.feature_attention = AttentionParams::create(d, cfg.heads, factory);
  b.feature_mlp_norm = LayerNormParams::create(d);
  b.feature_mlp = MlpParams::create(d, hidden, d, Activation::gelu, false, factory);
  b.sample_norm = LayerNormParams::create(d);
  b.sample_attention = AttentionParams::create(d, cfg.heads, factory);
  b.sample_mlp_norm = LayerNormParams::create(d);
  b.sample_mlp = MlpParams::create(d, hidden, d, Activation::gelu, false, factory);
  return b;
}

void BlockParams::collect(const std::string& prefix, ParamList& out) const {
  feature_norm.collect(prefix + ".feature_norm", out);
  feature_attention.collect(prefix + ".feature_attention", out);
  feature_mlp_norm.collect(prefix + ".feature_mlp_norm", out);
  feature_mlp.collect(prefix + ".feature_mlp", out);
  sample_norm.collect(prefix + ".sample_norm", out);
  sample_attention.collect(prefix + ".sample_attention", out);
  sample_mlp_norm.collect(prefix + ".sample_mlp_norm", out);
  sample_mlp.collect(prefix + ".sample_mlp", out);
}

BackboneParams BackboneParams::create(const BackboneConfig& cfg, std::uint64_t seed) {
  if (cfg.model_dim == 0 || cfg.blocks == 0 || cfg.max_classes < 2) {
    throw ConfigError("backbone needs model_dim >= 1, blocks >= 1 and max_classes >= 2");
  }
  ParamFactory factory(seed);
  BackboneParams p;
  p.config = cfg;
  p.label_embedding = factory.normal({cfg.max_classes, cfg.model_dim}, 1.0);
  p.placeholder = factory.normal({1, cfg.model_dim}, 1.0);
  for (std::size_t i = 0; i < cfg.blocks; ++i) p.blocks.push_back(BlockParams::create(cfg, factory));
  p.decoder_norm = LayerNormParams::create(cfg.model_dim);
  p.decoder = MlpParams::create(cfg.model_dim, cfg.mlp_hidden_mult * cfg.model_dim, cfg.max_classes,
                                Activation::gelu, false, factory);
  return p;
}

ParamList BackboneParams::parameters(const std::string& prefix) const {
  ParamList out;
  out.push_back({prefix + ".label_embedding", label_embedding});
  out.push_back({prefix + ".placeholder", placeholder});
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].collect(prefix + ".blocks." + std::to_string(i), out);
  }
  decoder_norm.collect(prefix + ".decoder_norm", out);
  decoder.collect(prefix + ".decoder", out);
  return out;
}

CellGrid embed_cells(const Tensor& table, std::span<const std::size_t> train_labels,
                     std::size_t n_classes, const BackboneParams& params) {
  if (table.rank() != 3 || table.dim(2) != params.config.model_dim) {
    throw ShapeError("embed_cells: table " + shape_string(table.shape()) + " is not [S, F, " +
                     std::to_string(params.config.model_dim) + "]");
  }
  if (n_classes < 2 || n_classes > params.config.max_classes) {
    throw ShapeError("embed_cells: n_classes " + std::to_string(n_classes) + " outside [2, " +
                     std::to_string(params.config.max_classes) + "]");
  }
  const std::size_t samples = table.dim(0);
  const std::size_t d = table.dim(2);
  if (train_labels.size() > samples) {
    throw ShapeError("embed_cells: more labels than samples");
  }
  std::vector<std::size_t> index(samples, params.config.max_classes);
  for (std::size_t i = 0; i < train_labels.size(); ++i) {
    if (train_labels[i] >= n_classes) {
      throw ShapeError("embed_cells: label " + std::to_string(train_labels[i]) + " of row " +
                       std::to_string(i) + " outside [0, " + std::to_string(n_classes) + ")");
    }
    index[i] = train_labels[i];
  }
  const Tensor rows[] = {params.label_embedding, params.placeholder};
  const Tensor label_table = concat(rows, 0);
  const Tensor labels = reshape(gather_rows(label_table, index), {samples, 1, d});
  const Tensor columns[] = {table, labels};
  return CellGrid{concat(columns, 1), train_labels.size(), samples - train_labels.size()};
}

BoolMatrix build_incontext_mask(std::size_t n_train, std::size_t n_test) {
  if (n_train == 0) throw ShapeError("in-context mask needs at least one training row");
  const std::size_t n = n_train + n_test;
  BoolMatrix mask(n, n, false);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n_train; ++c) mask.set(r, c, true);
  }
  return mask;
}

CellGrid pfn_block(const CellGrid& grid, const BoolMatrix& mask, const BlockParams& p,
                   AttentionWeights* feature_weights, AttentionWeights* sample_weights) {
  if (mask.rows() != grid.samples() || mask.cols() != grid.samples()) {
    throw ShapeError("pfn_block: mask does not match " + std::to_string(grid.samples()) + " samples");
  }
  // Feature stage: each sample attends across its own tokens.
  Tensor x = grid.tokens;
  Tensor h = layernorm(x, p.feature_norm);
  x = add(x, multi_head_attention(h, h, p.feature_attention, nullptr, feature_weights));
  x = add(x, mlp_block(layernorm(x, p.feature_mlp_norm), p.feature_mlp));

  // Sample stage: each column attends across samples under the in-context mask.
  Tensor xt = transpose01(x);
  h = layernorm(xt, p.sample_norm);
  xt = add(xt, multi_head_attention(h, h, p.sample_attention, &mask, sample_weights));
  xt = add(xt, mlp_block(layernorm(xt, p.sample_mlp_norm), p.sample_mlp));
  x = transpose01(xt);
  return CellGrid{x, grid.n_train, grid.n_test};
}

CellGrid run_blocks(const CellGrid& grid, const BoolMatrix& mask, const BackboneParams& params,
                    BlockCapture* capture) {
  CellGrid g = grid;
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    const bool hit = capture && capture->block == i;
    g = pfn_block(g, mask, params.blocks[i], hit ? &capture->feature_weights : nullptr,
                  hit ? &capture->sample_weights : nullptr);
    if (hit) capture->block_output = g.tokens;
  }
  if (capture && capture->block >= params.blocks.size()) {
    throw ShapeError("capture block " + std::to_string(capture->block) + " beyond " +
                     std::to_string(params.blocks.size()) + " blocks");
  }
  return g;
}

Tensor decode(const CellGrid& grid, const BackboneParams& params, std::size_t n_classes) {
  if (grid.n_test == 0) throw ShapeError("decode: no query rows to predict");
  if (n_classes < 2 || n_classes > params.config.max_classes) {
    throw ShapeError("decode: n_classes " + std::to_string(n_classes) + " outside [2, " +
                     std::to_string(params.config.max_classes) + "]");
  }
  const std::size_t f = grid.n_features();
  const std::size_t d = grid.model_dim();
  Tensor label_col = slice(grid.tokens, 1, f, f + 1);
  Tensor query = reshape(slice(label_col, 0, grid.n_train, grid.samples()), {grid.n_test, d});
  Tensor logits = mlp_block(layernorm(query, params.decoder_norm), params.decoder);
  if (n_classes == params.config.max_classes) return logits;
  return slice(logits, 1, 0, n_classes);
}

Tensor predict_proba(const Tensor& logits) { return softmax(logits, logits.rank() - 1); }

Tensor backbone_logits(const Tensor& table, std::span<const std::size_t> train_labels,
                       std::size_t n_classes, const BackboneParams& params) {
  const CellGrid grid = embed_cells(table, train_labels, n_classes, params);
  const BoolMatrix mask = build_incontext_mask(grid.n_train, grid.n_test);
  return decode(run_blocks(grid, mask, params), params, n_classes);
}

std::size_t TokenPartition::feature_count() const {
  std::size_t n = 0;
  for (const PartitionCell& c : cells) n += c.features.size();
  return n;
}

void TokenPartition::validate(std::size_t n_features) const {
  std::vector<int> seen(n_features, 0);
  for (const PartitionCell& c : cells) {
    for (std::size_t f : c.features) {
      if (f >= n_features) {
        throw ShapeError("partition cell '" + c.name + "' names feature " + std::to_string(f) +
                         " beyond " + std::to_string(n_features) + " features");
      }
      if (seen[f]++) {
        throw ShapeError("partition cells overlap at feature " + std::to_string(f));
      }
    }
  }
  for (std::size_t f = 0; f < n_features; ++f) {
    if (!seen[f]) throw ShapeError("partition leaves feature " + std::to_string(f) + " uncovered");
  }
}

AttentionMassReport attention_mass_probe(const CellGrid& grid, const BoolMatrix& mask,
                                         const BackboneParams& params,
                                         const TokenPartition& partition, std::size_t block) {
  const std::size_t f = grid.n_features();
  partition.validate(f);
  BlockCapture capture;
  capture.block = block;
  {
    NoGradGuard no_grad;
    run_blocks(grid, mask, params, &capture);
  }
  const AttentionWeights& w = capture.feature_weights;
  std::vector<std::size_t> owner(f + 1, partition.cells.size());  // label -> last slot
  for (std::size_t c = 0; c < partition.cells.size(); ++c) {
    for (std::size_t feat : partition.cells[c].features) owner[feat] = c;
  }
  std::vector<double> mass(partition.cells.size() + 1, 0.0);
  for (std::size_t b = 0; b < w.batch; ++b) {
    for (std::size_t h = 0; h < w.heads; ++h) {
      for (std::size_t q = 0; q < w.queries; ++q) {
        for (std::size_t k = 0; k < w.keys; ++k) mass[owner[k]] += w.at(b, h, q, k);
      }
    }
  }
  const double rows = static_cast<double>(w.batch * w.heads * w.queries);
  AttentionMassReport report;
  std::size_t n_tab = 1;  // label token
  std::size_t n_nontab = 0;
  double nontab_mass = 0.0;
  for (std::size_t c = 0; c < partition.cells.size(); ++c) {
    const double m = mass[c] / rows;
    report.breakdown.push_back({partition.cells[c].name, m});
    if (partition.cells[c].name == "tabular") {
      n_tab += partition.cells[c].features.size();
    } else {
      n_nontab += partition.cells[c].features.size();
      nontab_mass += m;
    }
  }
  report.breakdown.push_back({"label", mass.back() / rows});
  report.empirical_mass = nontab_mass;
  report.predicted_mass = expected_attention_mass(n_nontab, n_tab, 1.0, 1.0);
  report.standard_error = 0.0;
  return report;
}

}  // namespace mmpfn
