#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

namespace mmpfn {

struct MassShare {
  std::string name;
  double mass = 0.0;
};

// Predicted vs measured share of softmax mass landing on a token subset.
struct AttentionMassReport {
  double predicted_mass = std::numeric_limits<double>::quiet_NaN();
  double empirical_mass = std::numeric_limits<double>::quiet_NaN();
  double standard_error = std::numeric_limits<double>::quiet_NaN();
  std::vector<MassShare> breakdown;  // sums to 1
};

// First-order expectation of the non-tabular mass:
//   N_I c_I / (N_I c_I + N_T c_T)
// Rejects N_I = N_T = 0 and non-positive per-token weights.
double expected_attention_mass(std::size_t n_nontabular, std::size_t n_tabular, double c_nontabular,
                               double c_tabular);

}  // namespace mmpfn
