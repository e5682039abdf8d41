#include "mmpfn/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <map>

#include <json.hpp>

#include "byte_io.hpp"
#include "mmpfn/error.hpp"

namespace mmpfn {

namespace detail {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace detail

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  try {
    header["meta"] = nlohmann::json::parse(ckpt.meta_json);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint meta is not valid JSON: ") + e.what());
  }
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const NamedTensor& nt : ckpt.tensors) {
    entries.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}, {"offset", offset}});
    offset += nt.tensor.size() * sizeof(double);
  }
  header["tensors"] = std::move(entries);
  const std::string text = header.dump();

  detail::ByteWriter w;
  w.bytes("MMPN");
  w.u32(kCheckpointVersion);
  w.u64(text.size());
  w.bytes(text);
  for (const NamedTensor& nt : ckpt.tensors) {
    for (double v : nt.tensor.values()) w.f64(v);
  }
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  if (r.bytes(4) != "MMPN") {
    throw DataError("checkpoint: bad magic (expected MMPN) at byte offset 0");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version) + " at byte offset 4");
  }
  const std::uint64_t header_len = r.u64();
  const std::size_t header_at = r.offset();
  const std::string text = r.bytes(header_len);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint: malformed header JSON at byte offset " + std::to_string(header_at) +
                    ": " + e.what());
  }
  Checkpoint ckpt;
  ckpt.meta_json = header.value("meta", nlohmann::json::object()).dump();
  const std::size_t data_at = r.offset();
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    if (data_at + offset != r.offset()) {
      r.fail("tensor '" + name + "' offset " + std::to_string(offset) + " is not contiguous");
    }
    const std::size_t n = shape_size(shape);
    r.need(n * sizeof(double));
    std::vector<double> values(n);
    for (double& v : values) v = r.f64();
    ckpt.tensors.push_back({name, Tensor(shape, std::move(values))});
  }
  if (r.remaining() != 0) r.fail("trailing bytes after parameter data");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  detail::write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file_bytes(path));
}

void load_parameters(const Checkpoint& ckpt, const ParamList& targets) {
  std::map<std::string, const Tensor*> by_name;
  for (const NamedTensor& nt : ckpt.tensors) by_name[nt.name] = &nt.tensor;
  for (const NamedTensor& target : targets) {
    auto it = by_name.find(target.name);
    if (it == by_name.end()) throw DataError("checkpoint is missing parameter '" + target.name + "'");
    if (it->second->shape() != target.tensor.shape()) {
      throw DataError("checkpoint parameter '" + target.name + "' has shape " +
                      shape_string(it->second->shape()) + ", model expects " +
                      shape_string(target.tensor.shape()));
    }
    Tensor dst = target.tensor;
    auto src = it->second->values();
    std::copy(src.begin(), src.end(), dst.mutable_values().begin());
  }
}

std::uint64_t parameter_digest(const ParamList& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const NamedTensor& nt : params) {
    feed(nt.name.data(), nt.name.size());
    for (std::size_t e : nt.tensor.shape()) feed(&e, sizeof(e));
    for (double v : nt.tensor.values()) {
      const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      feed(&bits, sizeof(bits));
    }
  }
  return h;
}

}  // namespace mmpfn
