#include "mmpfn/imbalance.hpp"

#include <cmath>

#include "mmpfn/error.hpp"
#include "mmpfn/parallel.hpp"
#include "mmpfn/rng.hpp"

namespace mmpfn {

double expected_attention_mass(std::size_t n_nontabular, std::size_t n_tabular,
                               double c_nontabular, double c_tabular) {
  if (n_nontabular + n_tabular == 0) {
    throw ConfigError("attention mass needs at least one token (N_I = N_T = 0)");
  }
  if (!(c_nontabular > 0.0) || !(c_tabular > 0.0)) {
    throw ConfigError("per-token weights c_I and c_T must be positive");
  }
  const double mass_i = static_cast<double>(n_nontabular) * c_nontabular;
  const double mass_t = static_cast<double>(n_tabular) * c_tabular;
  return mass_i / (mass_i + mass_t);
}

const char* to_string(ScoreDistribution d) {
  return d == ScoreDistribution::constant ? "constant" : "gaussian";
}

ScoreDistribution score_distribution_from_string(const std::string& name) {
  if (name == "gaussian") return ScoreDistribution::gaussian;
  if (name == "constant") return ScoreDistribution::constant;
  throw ConfigError("unknown score distribution '" + name + "' (expected gaussian or constant)");
}

void ImbalanceSpec::validate() const {
  if (n_nontabular + n_tabular == 0) throw ConfigError("N_I + N_T must be >= 1");
  if (!(c_nontabular > 0.0) || !(c_tabular > 0.0)) throw ConfigError("c_I and c_T must be > 0");
  if (key_dim == 0) throw ConfigError("key_dim must be >= 1");
  if (!(score_variance >= 0.0)) throw ConfigError("score_variance must be >= 0");
  if (samples == 0) throw ConfigError("Monte Carlo needs samples >= 1");
}

double expected_attention_mass(const ImbalanceSpec& spec) {
  return expected_attention_mass(spec.n_nontabular, spec.n_tabular, spec.c_nontabular,
                                 spec.c_tabular);
}

AttentionMassReport monte_carlo_attention_mass(const ImbalanceSpec& spec, std::size_t jobs) {
  spec.validate();
  const std::size_t n_keys = spec.n_nontabular + spec.n_tabular;
  const double shift = std::log(spec.c_nontabular / spec.c_tabular);
  const double score_scale =
      std::sqrt(spec.score_variance) / std::sqrt(static_cast<double>(spec.key_dim));
  std::vector<double> mass(spec.samples);
  std::vector<double> weight_i(spec.samples, 0.0);
  std::vector<double> weight_t(spec.samples, 0.0);
  parallel_for(spec.samples, jobs, [&](std::size_t draw) {
    Rng rng(derive_seed(spec.seed, draw));
    std::vector<double> q(spec.key_dim);
    std::vector<double> w(n_keys);
    if (spec.distribution == ScoreDistribution::gaussian) {
      for (double& x : q) x = rng.normal();
    }
    for (std::size_t j = 0; j < n_keys; ++j) {
      double score = 0.0;
      if (spec.distribution == ScoreDistribution::gaussian) {
        for (std::size_t e = 0; e < spec.key_dim; ++e) score += q[e] * rng.normal();
        score *= score_scale;
      }
      if (j < spec.n_nontabular) score += shift;
      w[j] = std::exp(score);
    }
    double sum_i = 0.0;
    double sum_t = 0.0;
    for (std::size_t j = 0; j < n_keys; ++j) (j < spec.n_nontabular ? sum_i : sum_t) += w[j];
    mass[draw] = sum_i / (sum_i + sum_t);
    weight_i[draw] = sum_i;
    weight_t[draw] = sum_t;
  });

  double total = 0.0;
  double total_i = 0.0;
  double total_t = 0.0;
  for (std::size_t s = 0; s < spec.samples; ++s) {
    total += mass[s];
    total_i += weight_i[s];
    total_t += weight_t[s];
  }
  const double n = static_cast<double>(spec.samples);
  const double mean = total / n;
  double sq = 0.0;
  for (double m : mass) sq += (m - mean) * (m - mean);

  AttentionMassReport report;
  report.empirical_mass = mean;
  report.standard_error = spec.samples > 1 ? std::sqrt(sq / (n - 1.0) / n) : 0.0;
  const double c_i = spec.n_nontabular > 0
                         ? total_i / (n * static_cast<double>(spec.n_nontabular))
                         : spec.c_nontabular;
  const double c_t =
      spec.n_tabular > 0 ? total_t / (n * static_cast<double>(spec.n_tabular)) : spec.c_tabular;
  report.predicted_mass = expected_attention_mass(spec.n_nontabular, spec.n_tabular, c_i, c_t);
  report.breakdown = {{"nontabular", mean}, {"tabular", 1.0 - mean}};
  return report;
}

CsvTable monte_carlo_csv(const std::vector<ImbalanceSpec>& specs,
                         const std::vector<AttentionMassReport>& reports) {
  if (specs.size() != reports.size()) throw ShapeError("monte_carlo_csv: size mismatch");
  CsvTable t;
  t.header = {"n_nontabular", "n_tabular",      "c_nontabular",   "c_tabular",      "key_dim",
              "distribution", "score_variance", "samples",        "seed",           "empirical_mass",
              "standard_error", "predicted_mass", "gap"};
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const ImbalanceSpec& s = specs[i];
    const AttentionMassReport& r = reports[i];
    t.rows.push_back({std::to_string(s.n_nontabular), std::to_string(s.n_tabular),
                      format_number(s.c_nontabular), format_number(s.c_tabular),
                      std::to_string(s.key_dim), to_string(s.distribution),
                      format_number(s.score_variance), std::to_string(s.samples),
                      std::to_string(s.seed), format_number(r.empirical_mass),
                      format_number(r.standard_error), format_number(r.predicted_mass),
                      format_number(r.empirical_mass - r.predicted_mass)});
  }
  return t;
}

AttentionMassReport probe_model(const MultimodalModel& model, const MultimodalDataset& data,
                                std::size_t block) {
  NoGradGuard no_grad;
  const FusedTable fused = model.fuse(data, data.train_rows, data.test_rows);
  std::vector<std::size_t> context_labels;
  for (std::size_t r : data.train_rows) context_labels.push_back(data.labels[r]);
  const CellGrid grid = embed_cells(fused.tokens, context_labels, data.n_classes, model.backbone());
  const BoolMatrix mask = build_incontext_mask(grid.n_train, grid.n_test);
  return attention_mass_probe(grid, mask, model.backbone(), fused.partition, block);
}

std::string variant_tag(const ProjectorVariant& v) {
  return std::string(to_string(v.kind)) + (v.cap ? "+cap" : "");
}

std::vector<SweepRow> imbalance_sweep(const MultimodalDataset& data, const SweepSetup& setup,
                                      std::size_t jobs) {
  if (setup.grid.empty()) throw ConfigError("imbalance sweep grid is empty");
  setup.training.validate();
  std::size_t slot = setup.model.modalities.size();
  for (std::size_t i = 0; i < setup.model.modalities.size(); ++i) {
    if (setup.model.modalities[i].name == setup.modality) slot = i;
  }
  if (slot == setup.model.modalities.size()) {
    throw ConfigError("sweep modality '" + setup.modality + "' is not part of the model");
  }
  const std::size_t n_seeds = setup.training.seeds.size();
  std::vector<SweepRow> rows(setup.grid.size() * n_seeds);
  parallel_for(rows.size(), jobs, [&](std::size_t index) {
    const ProjectorVariant variant = setup.grid[index / n_seeds].normalized();
    const std::uint64_t seed = setup.training.seeds[index % n_seeds];
    ModelSpec spec = setup.model;
    spec.modalities[slot].projector = variant;
    MultimodalModel model = MultimodalModel::create(spec, seed);
    if (setup.pretrained) model.load_pretrained(*setup.pretrained);
    const SeedResult result = fine_tune(model, data, setup.training, seed);
    const AttentionMassReport mass = probe_model(model, data, setup.probe_block);
    SweepRow& row = rows[index];
    row.variant = variant_tag(variant);
    row.n_heads = variant.heads;
    row.k_pooled = variant.cap ? variant.pooled : 0;
    row.seed = seed;
    row.accuracy = result.accuracy;
    row.nontabular_mass = mass.empirical_mass;
    row.tabular_mass = 1.0 - mass.empirical_mass;
    row.frozen_digest = result.frozen_digest;
  });
  return rows;
}

CsvTable sweep_csv(const std::vector<SweepRow>& rows) {
  CsvTable t;
  t.header = {"variant", "N", "K", "seed", "accuracy", "tabular_mass", "nontabular_mass"};
  for (const SweepRow& r : rows) {
    t.rows.push_back({r.variant, std::to_string(r.n_heads), std::to_string(r.k_pooled),
                      std::to_string(r.seed), format_number(r.accuracy),
                      format_number(r.tabular_mass), format_number(r.nontabular_mass)});
  }
  return t;
}

}  // namespace mmpfn
