#include "mmpfn/embedding_file.hpp"

#include <cmath>
#include <limits>

#include "byte_io.hpp"
#include "mmpfn/error.hpp"

namespace mmpfn {

Tensor EmbeddingSet::rows(std::span<const std::size_t> selected) const {
  if (selected.empty() || dim == 0) {
    throw ShapeError("embedding set '" + modality + "': empty row selection");
  }
  std::vector<double> out(selected.size() * dim);
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (selected[i] >= count) {
      throw ShapeError("embedding set '" + modality + "': row " + std::to_string(selected[i]) +
                       " beyond " + std::to_string(count) + " rows");
    }
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(selected[i] * dim), dim,
                out.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  return Tensor({selected.size(), dim}, std::move(out));
}

Tensor EmbeddingSet::all() const {
  if (count == 0) throw ShapeError("embedding set '" + modality + "' is empty");
  return Tensor({count, dim}, values);
}

std::vector<std::uint8_t> encode_embedding_file(const EmbeddingSet& set) {
  if (set.dim == 0 || set.dim > std::numeric_limits<std::uint32_t>::max()) {
    throw DataError("embedding set '" + set.modality + "': invalid dim " + std::to_string(set.dim));
  }
  if (set.values.size() != set.count * set.dim) {
    throw DataError("embedding set '" + set.modality + "': holds " + std::to_string(set.values.size()) +
                    " values, expected count * dim = " + std::to_string(set.count * set.dim));
  }
  if (set.modality.size() > 0xFFFF || set.fingerprint.size() > 0xFFFF) {
    throw DataError("embedding set: modality name or fingerprint longer than 65535 bytes");
  }
  detail::ByteWriter w;
  w.bytes("MMPE");
  w.u32(kEmbeddingFileVersion);
  w.u8(kEmbeddingDtypeF32);
  w.u32(static_cast<std::uint32_t>(set.dim));
  w.u64(set.count);
  w.u16(static_cast<std::uint16_t>(set.modality.size()));
  w.bytes(set.modality);
  w.u16(static_cast<std::uint16_t>(set.fingerprint.size()));
  w.bytes(set.fingerprint);
  for (double v : set.values) w.f32(static_cast<float>(v));
  return std::move(w.buffer());
}

EmbeddingSet decode_embedding_file(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "embedding file");
  if (r.bytes(4) != "MMPE") throw DataError("embedding file: bad magic (expected MMPE) at byte offset 0");
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != kEmbeddingFileVersion) {
    throw DataError("embedding file: unsupported version " + std::to_string(version) +
                    " at byte offset " + std::to_string(version_at));
  }
  const std::size_t dtype_at = r.offset();
  const std::uint8_t dtype = r.u8();
  if (dtype != kEmbeddingDtypeF32) {
    throw DataError("embedding file: unsupported dtype code " + std::to_string(dtype) +
                    " at byte offset " + std::to_string(dtype_at));
  }
  EmbeddingSet set;
  const std::size_t dim_at = r.offset();
  set.dim = r.u32();
  if (set.dim == 0) {
    throw DataError("embedding file: dim must be positive at byte offset " + std::to_string(dim_at));
  }
  set.count = r.u64();
  set.modality = r.bytes(r.u16());
  set.fingerprint = r.bytes(r.u16());
  const std::size_t payload = set.count * set.dim * 4;
  if (r.remaining() != payload) {
    throw DataError("embedding file: payload is " + std::to_string(r.remaining()) +
                    " bytes at byte offset " + std::to_string(r.offset()) + ", expected count*dim*4 = " +
                    std::to_string(payload));
  }
  set.values.resize(set.count * set.dim);
  for (std::size_t i = 0; i < set.values.size(); ++i) {
    const std::size_t at = r.offset();
    const float v = r.f32();
    if (!std::isfinite(v)) {
      throw DataError("embedding file: non-finite value at byte offset " + std::to_string(at));
    }
    set.values[i] = static_cast<double>(v);
  }
  return set;
}

void write_embedding_file(const std::filesystem::path& path, const EmbeddingSet& set) {
  detail::write_file_bytes(path, encode_embedding_file(set));
}

EmbeddingSet load_embedding_file(const std::filesystem::path& path) {
  return decode_embedding_file(detail::read_file_bytes(path));
}

}  // namespace mmpfn
