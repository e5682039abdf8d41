#pragma once

#include <cstdint>
#include <string>

#include "mmpfn/dataset.hpp"

namespace mmpfn {

enum class TaskKind {
  // label = tabular bit XOR image latent bit; distractor columns are noise.
  xor_bits,
  // label = [sum(x) / sqrt(f_T) + s_I > 0] over f_T tabular columns and one
  // image latent s_I, so both views carry half the signal.
  shared_signal,
  // label = [s_T + 1.5 s_I + s_t > 0]: independent Gaussian signals in the
  // tabular, "image" and "text" views.
  three_signal,
};

const char* to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& name);

struct TaskSpec {
  TaskKind kind = TaskKind::xor_bits;
  std::size_t n_train = 96;
  std::size_t n_test = 96;
  std::uint64_t seed = 0;
  std::size_t tabular_width = 4;  // total tabular columns, including signal ones
  std::size_t embed_dim = 16;
  double embed_noise = 0.05;

  void validate() const;
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

// Rows [0, n_train) form the train split and the rest the test split.
// Modalities are named "image" and (three_signal only) "text".
MultimodalDataset make_task(const TaskSpec& spec);

}  // namespace mmpfn
