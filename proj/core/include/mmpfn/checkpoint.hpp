#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mmpfn/nn.hpp"

namespace mmpfn {

// On-disk layout ("MMPN", all integers little-endian):
//   magic "MMPN" | version u32 | header length u64 | header (UTF-8 JSON) |
//   parameter data (binary64 little-endian)
// The header is {"meta": {...}, "tensors": [{"name", "shape", "offset"}]}
// with offsets in bytes from the start of the parameter data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string meta_json = "{}";  // free-form JSON object describing the model
  ParamList tensors;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies checkpoint values into the live parameters with the same names.
// Every target must be present with an identical shape; extra checkpoint
// entries are ignored.
void load_parameters(const Checkpoint& ckpt, const ParamList& targets);

// FNV-1a 64 over names, shapes and raw value bytes. Used to verify that
// frozen parameters are untouched by training.
std::uint64_t parameter_digest(const ParamList& params);

}  // namespace mmpfn
