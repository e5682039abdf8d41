#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mmpfn/tensor.hpp"

namespace mmpfn {

// Per-sample [CLS] vectors for one non-tabular modality. Row i pairs with
// data row i of the tabular table.
struct EmbeddingSet {
  std::string modality;
  std::size_t dim = 0;
  std::size_t count = 0;
  std::vector<double> values;  // count * dim, row-major
  std::string fingerprint;

  // [rows.size(), dim] tensor of the selected rows.
  Tensor rows(std::span<const std::size_t> rows) const;
  Tensor all() const;
};

// MMPE layout, little-endian:
//   magic "MMPE" | version u32 | dtype u8 (0 = binary32) | dim u32 | count u64 |
//   name length u16 | name UTF-8 | fingerprint length u16 | fingerprint UTF-8 |
//   payload count * dim binary32
inline constexpr std::uint32_t kEmbeddingFileVersion = 1;
inline constexpr std::uint8_t kEmbeddingDtypeF32 = 0;

std::vector<std::uint8_t> encode_embedding_file(const EmbeddingSet& set);
EmbeddingSet decode_embedding_file(std::span<const std::uint8_t> bytes);

void write_embedding_file(const std::filesystem::path& path, const EmbeddingSet& set);
EmbeddingSet load_embedding_file(const std::filesystem::path& path);

}  // namespace mmpfn
