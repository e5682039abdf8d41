#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmpfn/attention_mass.hpp"
#include "mmpfn/checkpoint.hpp"
#include "mmpfn/csv.hpp"
#include "mmpfn/train.hpp"

namespace mmpfn {

enum class ScoreDistribution {
  gaussian,  // q, k ~ N(0, I_d)
  constant,  // every raw score is 0
};

const char* to_string(ScoreDistribution d);
ScoreDistribution score_distribution_from_string(const std::string& name);

// One query against N_I non-tabular and N_T tabular keys. Scores are
// sqrt(score_variance) * q . k / sqrt(key_dim), plus ln(c_I / c_T) on the
// non-tabular keys.
struct ImbalanceSpec {
  std::size_t n_nontabular = 1;  // N_I
  std::size_t n_tabular = 1;     // N_T
  double c_nontabular = 1.0;     // c_I
  double c_tabular = 1.0;        // c_T
  std::size_t key_dim = 16;
  ScoreDistribution distribution = ScoreDistribution::gaussian;
  double score_variance = 1.0;
  std::size_t samples = 10000;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ImbalanceSpec&, const ImbalanceSpec&) = default;
};

double expected_attention_mass(const ImbalanceSpec& spec);

// Mean a_I over `samples` independent draws with its standard error. The
// prediction plugs the measured per-token mean weights (c_I, c_T estimates)
// into the first-order formula; the breakdown is {nontabular, tabular}.
// Draw i uses Rng(derive_seed(seed, i)), so any `jobs` gives the same report.
AttentionMassReport monte_carlo_attention_mass(const ImbalanceSpec& spec, std::size_t jobs = 1);

// Header: n_nontabular,n_tabular,c_nontabular,c_tabular,key_dim,distribution,
// score_variance,samples,seed,empirical_mass,standard_error,predicted_mass,gap
CsvTable monte_carlo_csv(const std::vector<ImbalanceSpec>& specs,
                         const std::vector<AttentionMassReport>& reports);

// Feature-stage attention mass of the fine-tuned model at `block`, measured
// on the final evaluation grid (full train split as context).
AttentionMassReport probe_model(const MultimodalModel& model, const MultimodalDataset& data,
                                std::size_t block);

struct SweepRow {
  std::string variant;  // e.g. "mgm" or "mgm+cap"
  std::size_t n_heads = 0;
  std::size_t k_pooled = 0;  // 0 when the variant has no CAP
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double tabular_mass = 0.0;
  double nontabular_mass = 0.0;
  std::uint64_t frozen_digest = 0;
};

std::string variant_tag(const ProjectorVariant& v);

struct SweepSetup {
  ModelSpec model;  // projector of modality `modality` is replaced per cell
  std::string modality = "image";
  std::vector<ProjectorVariant> grid;
  FineTuneConfig training;
  std::size_t probe_block = 0;
  const Checkpoint* pretrained = nullptr;  // optional
};

// One row per (grid cell, seed), ordered by cell then seed.
std::vector<SweepRow> imbalance_sweep(const MultimodalDataset& data, const SweepSetup& setup,
                                      std::size_t jobs = 1);

// Header: variant,N,K,seed,accuracy,tabular_mass,nontabular_mass
CsvTable sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace mmpfn
