#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mmpfn/tensor.hpp"

namespace mmpfn {

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> row);

// Argmax match rate of probabilities[n, C] against labels.
double evaluate_accuracy(const Tensor& probabilities, std::span<const std::size_t> labels);

// accuracy[dataset][method], nullopt where a method has no result. Per
// dataset, rank 1 is the best accuracy and tied methods share the mean of
// their ranks; a missing method is left out of that dataset. Returns each
// method's mean rank over the datasets where it has a value (NaN if none).
std::vector<double> rank_aggregate(const std::vector<std::vector<std::optional<double>>>& accuracy);

struct SimilarityMatrix {
  std::size_t size = 0;
  std::vector<double> values;  // [size, size] row-major
  std::size_t zero_norm_pairs = 0;

  double at(std::size_t i, std::size_t j) const { return values[i * size + j]; }
};

// embeddings[n, F, d]: per instance, the cosine similarity of every pair of
// feature tokens, averaged over instances. The diagonal is 1; a pair with a
// zero-norm vector contributes 0 and is counted in zero_norm_pairs.
SimilarityMatrix cosine_similarity_matrix(const Tensor& embeddings);

// Uniform stratified subsample of the train rows: one random row per class
// first, then uniform draws without replacement to round(fraction * n) rows.
// Returns the selected rows in ascending order (fraction 1 returns the
// input unchanged). Rejects fractions outside
// (0, 1] and fractions too small to keep every class.
std::vector<std::size_t> subsample_split(std::span<const std::size_t> train_rows,
                                         std::span<const std::size_t> labels, double fraction,
                                         std::uint64_t seed);

}  // namespace mmpfn
