#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmpfn/backbone.hpp"
#include "mmpfn/error.hpp"
#include "mmpfn/projector.hpp"

namespace mmpfn::json {

using Json = nlohmann::ordered_json;

Json parse(const std::string& text, const std::string& what);

// Strict view of a JSON object: typed getters report the JSON path on error
// and finish() rejects keys that were never read.
class ObjectReader {
 public:
  ObjectReader(const Json& value, std::string path);

  bool has(const std::string& key) const;
  const std::string& path() const { return path_; }
  std::string path_of(const std::string& key) const;

  const Json& raw(const std::string& key);
  ObjectReader object(const std::string& key);
  std::vector<ObjectReader> objects(const std::string& key);

  std::string string(const std::string& key);
  std::string string(const std::string& key, const std::string& fallback);
  double number(const std::string& key);
  double number(const std::string& key, double fallback);
  std::size_t size(const std::string& key);
  std::size_t size(const std::string& key, std::size_t fallback);
  std::uint64_t u64(const std::string& key, std::uint64_t fallback);
  bool boolean(const std::string& key, bool fallback);
  std::vector<std::size_t> sizes(const std::string& key, std::vector<std::size_t> fallback);
  std::vector<std::uint64_t> u64s(const std::string& key, std::vector<std::uint64_t> fallback);
  std::vector<std::string> strings(const std::string& key, std::vector<std::string> fallback);

  void finish() const;

 private:
  const Json& require(const std::string& key);
  const Json* value_;
  std::string path_;
  std::set<std::string> used_;
};

Json to_json(const BackboneConfig& cfg);
BackboneConfig backbone_from_json(ObjectReader r);
Json to_json(const ProjectorVariant& v);
ProjectorVariant projector_from_json(ObjectReader r);

}  // namespace mmpfn::json
