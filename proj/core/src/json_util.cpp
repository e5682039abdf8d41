#include "json_util.hpp"

#include <cmath>

namespace mmpfn::json {

namespace {

std::uint64_t as_u64(const Json& v, const std::string& where) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  throw ConfigError(where + ": expected a non-negative integer");
}

}  // namespace

Json parse(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(what + ": invalid JSON (" + e.what() + ")");
  }
}

ObjectReader::ObjectReader(const Json& value, std::string path)
    : value_(&value), path_(std::move(path)) {
  if (!value.is_object()) throw ConfigError(path_ + ": expected an object");
}

bool ObjectReader::has(const std::string& key) const { return value_->contains(key); }

std::string ObjectReader::path_of(const std::string& key) const {
  return path_.empty() ? key : path_ + "." + key;
}

const Json& ObjectReader::require(const std::string& key) {
  if (!has(key)) throw ConfigError(path_of(key) + ": missing required key");
  used_.insert(key);
  return (*value_)[key];
}

const Json& ObjectReader::raw(const std::string& key) { return require(key); }

ObjectReader ObjectReader::object(const std::string& key) {
  return ObjectReader(require(key), path_of(key));
}

std::vector<ObjectReader> ObjectReader::objects(const std::string& key) {
  const Json& arr = require(key);
  if (!arr.is_array()) throw ConfigError(path_of(key) + ": expected an array");
  std::vector<ObjectReader> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    out.emplace_back(arr[i], path_of(key) + "[" + std::to_string(i) + "]");
  }
  return out;
}

std::string ObjectReader::string(const std::string& key) {
  const Json& v = require(key);
  if (!v.is_string()) throw ConfigError(path_of(key) + ": expected a string");
  return v.get<std::string>();
}

std::string ObjectReader::string(const std::string& key, const std::string& fallback) {
  return has(key) ? string(key) : fallback;
}

double ObjectReader::number(const std::string& key) {
  const Json& v = require(key);
  if (!v.is_number()) throw ConfigError(path_of(key) + ": expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(path_of(key) + ": expected a finite number");
  return x;
}

double ObjectReader::number(const std::string& key, double fallback) {
  return has(key) ? number(key) : fallback;
}

std::size_t ObjectReader::size(const std::string& key) {
  return static_cast<std::size_t>(as_u64(require(key), path_of(key)));
}

std::size_t ObjectReader::size(const std::string& key, std::size_t fallback) {
  return has(key) ? size(key) : fallback;
}

std::uint64_t ObjectReader::u64(const std::string& key, std::uint64_t fallback) {
  return has(key) ? as_u64(require(key), path_of(key)) : fallback;
}

bool ObjectReader::boolean(const std::string& key, bool fallback) {
  if (!has(key)) return fallback;
  const Json& v = require(key);
  if (!v.is_boolean()) throw ConfigError(path_of(key) + ": expected true or false");
  return v.get<bool>();
}

std::vector<std::size_t> ObjectReader::sizes(const std::string& key,
                                             std::vector<std::size_t> fallback) {
  std::vector<std::size_t> out;
  for (std::uint64_t v : u64s(key, {fallback.begin(), fallback.end()})) {
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::vector<std::uint64_t> ObjectReader::u64s(const std::string& key,
                                              std::vector<std::uint64_t> fallback) {
  if (!has(key)) return fallback;
  const Json& arr = require(key);
  if (!arr.is_array()) throw ConfigError(path_of(key) + ": expected an array");
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    out.push_back(as_u64(arr[i], path_of(key) + "[" + std::to_string(i) + "]"));
  }
  return out;
}

std::vector<std::string> ObjectReader::strings(const std::string& key,
                                               std::vector<std::string> fallback) {
  if (!has(key)) return fallback;
  const Json& arr = require(key);
  if (!arr.is_array()) throw ConfigError(path_of(key) + ": expected an array");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_string()) {
      throw ConfigError(path_of(key) + "[" + std::to_string(i) + "]: expected a string");
    }
    out.push_back(arr[i].get<std::string>());
  }
  return out;
}

void ObjectReader::finish() const {
  for (const auto& item : value_->items()) {
    if (!used_.count(item.key())) throw ConfigError(path_of(item.key()) + ": unknown key");
  }
}

Json to_json(const BackboneConfig& cfg) {
  Json j;
  j["model_dim"] = cfg.model_dim;
  j["heads"] = cfg.heads;
  j["blocks"] = cfg.blocks;
  j["mlp_hidden_mult"] = cfg.mlp_hidden_mult;
  j["max_classes"] = cfg.max_classes;
  return j;
}

BackboneConfig backbone_from_json(ObjectReader r) {
  BackboneConfig cfg;
  cfg.model_dim = r.size("model_dim", cfg.model_dim);
  cfg.heads = r.size("heads", cfg.heads);
  cfg.blocks = r.size("blocks", cfg.blocks);
  cfg.mlp_hidden_mult = r.size("mlp_hidden_mult", cfg.mlp_hidden_mult);
  cfg.max_classes = r.size("max_classes", cfg.max_classes);
  r.finish();
  if (cfg.model_dim == 0 || cfg.heads == 0 || cfg.model_dim % cfg.heads != 0) {
    throw ConfigError(r.path() + ": model_dim must be a positive multiple of heads");
  }
  if (cfg.blocks == 0 || cfg.mlp_hidden_mult == 0) {
    throw ConfigError(r.path() + ": blocks and mlp_hidden_mult must be positive");
  }
  if (cfg.max_classes < 2) throw ConfigError(r.path() + ": max_classes must be >= 2");
  return cfg;
}

Json to_json(const ProjectorVariant& v) {
  Json j;
  j["variant"] = to_string(v.kind);
  j["N"] = v.heads;
  j["cap"] = v.cap;
  j["K"] = v.pooled;
  j["cap_heads"] = v.cap_attention_heads;
  j["cap_residual"] = v.cap_residual;
  j["head_output"] = to_string(v.head_output);
  j["hidden"] = v.hidden;
  return j;
}

ProjectorVariant projector_from_json(ObjectReader r) {
  ProjectorVariant v;
  v.kind = projector_kind_from_string(r.string("variant", to_string(v.kind)));
  v.heads = r.size("N", v.heads);
  v.cap = r.boolean("cap", v.cap);
  v.pooled = r.size("K", v.pooled);
  v.cap_attention_heads = r.size("cap_heads", v.cap_attention_heads);
  v.cap_residual = r.boolean("cap_residual", v.cap_residual);
  v.head_output = head_output_from_string(r.string("head_output", to_string(v.head_output)));
  v.hidden = r.size("hidden", v.hidden);
  r.finish();
  try {
    return v.normalized();
  } catch (const ConfigError& e) {
    throw ConfigError(r.path() + ": " + e.what());
  }
}

}  // namespace mmpfn::json
