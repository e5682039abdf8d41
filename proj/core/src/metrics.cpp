#include "mmpfn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "mmpfn/error.hpp"
#include "mmpfn/rng.hpp"

namespace mmpfn {

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

double evaluate_accuracy(const Tensor& probabilities, std::span<const std::size_t> labels) {
  if (probabilities.rank() != 2 || probabilities.dim(0) != labels.size()) {
    throw ShapeError("evaluate_accuracy: probabilities " + shape_string(probabilities.shape()) +
                     " do not match " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t c = probabilities.dim(1);
  auto p = probabilities.values();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    correct += argmax(p.subspan(i * c, c)) == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::vector<double> rank_aggregate(
    const std::vector<std::vector<std::optional<double>>>& accuracy) {
  std::size_t methods = 0;
  for (const auto& row : accuracy) methods = std::max(methods, row.size());
  std::vector<double> total(methods, 0.0);
  std::vector<std::size_t> count(methods, 0);
  for (const auto& row : accuracy) {
    std::vector<std::size_t> present;
    for (std::size_t m = 0; m < row.size(); ++m) {
      if (row[m]) present.push_back(m);
    }
    std::sort(present.begin(), present.end(),
              [&row](std::size_t a, std::size_t b) { return *row[a] > *row[b]; });
    for (std::size_t i = 0; i < present.size();) {
      std::size_t j = i;
      while (j < present.size() && *row[present[j]] == *row[present[i]]) ++j;
      // Positions i..j-1 share ranks i+1..j.
      const double shared = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
      for (std::size_t k = i; k < j; ++k) {
        total[present[k]] += shared;
        count[present[k]] += 1;
      }
      i = j;
    }
  }
  std::vector<double> mean(methods, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t m = 0; m < methods; ++m) {
    if (count[m] > 0) mean[m] = total[m] / static_cast<double>(count[m]);
  }
  return mean;
}

SimilarityMatrix cosine_similarity_matrix(const Tensor& embeddings) {
  if (embeddings.rank() != 3) throw ShapeError("cosine_similarity_matrix expects [n, F, d]");
  const std::size_t n = embeddings.dim(0);
  const std::size_t f = embeddings.dim(1);
  const std::size_t d = embeddings.dim(2);
  SimilarityMatrix out;
  out.size = f;
  out.values.assign(f * f, 0.0);
  auto v = embeddings.values();
  std::vector<double> norms(f);
  for (std::size_t s = 0; s < n; ++s) {
    const double* base = v.data() + s * f * d;
    for (std::size_t i = 0; i < f; ++i) {
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) sq += base[i * d + k] * base[i * d + k];
      norms[i] = std::sqrt(sq);
    }
    for (std::size_t i = 0; i < f; ++i) {
      for (std::size_t j = i + 1; j < f; ++j) {
        if (norms[i] == 0.0 || norms[j] == 0.0) {
          out.zero_norm_pairs += 1;
          continue;
        }
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += base[i * d + k] * base[j * d + k];
        const double cosine = dot / (norms[i] * norms[j]);
        out.values[i * f + j] += cosine;
        out.values[j * f + i] += cosine;
      }
    }
  }
  for (std::size_t i = 0; i < f; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      out.values[i * f + j] = i == j ? 1.0 : out.values[i * f + j] / static_cast<double>(n);
    }
  }
  return out;
}

std::vector<std::size_t> subsample_split(std::span<const std::size_t> train_rows,
                                         std::span<const std::size_t> labels, double fraction,
                                         std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("subsample fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  const std::size_t n = train_rows.size();
  if (n == 0) throw DataError("subsample_split: empty train split");
  if (fraction == 1.0) return {train_rows.begin(), train_rows.end()};
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t r : train_rows) {
    if (r >= labels.size()) throw DataError("subsample_split: row index out of range");
    by_class[labels[r]].push_back(r);
  }
  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (target < by_class.size()) {
    throw ConfigError("subsample fraction " + std::to_string(fraction) + " keeps " +
                      std::to_string(target) + " rows but " + std::to_string(by_class.size()) +
                      " classes must be kept; minimum feasible fraction is " +
                      std::to_string(static_cast<double>(by_class.size()) / static_cast<double>(n)));
  }
  Rng rng(seed);
  std::vector<std::size_t> chosen;
  std::vector<std::size_t> rest;
  for (auto& [label, rows] : by_class) {
    const std::size_t pick = rng.below(rows.size());
    chosen.push_back(rows[pick]);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i != pick) rest.push_back(rows[i]);
    }
  }
  rng.shuffle(rest);
  rest.resize(target - chosen.size());
  chosen.insert(chosen.end(), rest.begin(), rest.end());
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace mmpfn
