#include "mmpfn/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json_util.hpp"
#include "mmpfn/csv.hpp"
#include "mmpfn/error.hpp"
#include "mmpfn/rng.hpp"

namespace mmpfn {

namespace {

using json::Json;
using json::ObjectReader;

CountRange count_range(ObjectReader& r, const std::string& key, CountRange fallback) {
  const std::vector<std::size_t> v = r.sizes(key, {fallback.min, fallback.max});
  if (v.size() != 2) throw ConfigError(r.path_of(key) + ": expected [min, max]");
  return {v[0], v[1]};
}

RealRange real_range(ObjectReader& r, const std::string& key, RealRange fallback) {
  if (!r.has(key)) return fallback;
  const Json& v = r.raw(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw ConfigError(r.path_of(key) + ": expected [min, max]");
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

TaskSpec parse_task(ObjectReader r) {
  TaskSpec t;
  t.kind = task_kind_from_string(r.string("kind"));
  t.n_train = r.size("n_train", t.n_train);
  t.n_test = r.size("n_test", t.n_test);
  t.seed = r.u64("seed", t.seed);
  t.tabular_width = r.size("tabular_width", t.tabular_width);
  t.embed_dim = r.size("embed_dim", t.embed_dim);
  t.embed_noise = r.number("embed_noise", t.embed_noise);
  r.finish();
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(r.path() + ": " + e.what());
  }
  return t;
}

CsvSource parse_csv_source(ObjectReader r) {
  CsvSource s;
  s.path = r.string("path");
  for (ObjectReader c : r.objects("columns")) {
    ColumnSpec spec;
    spec.name = c.string("name");
    const std::string kind = c.string("kind", "numeric");
    if (kind == "numeric") {
      spec.kind = ColumnKind::numeric;
    } else if (kind == "categorical") {
      spec.kind = ColumnKind::categorical;
    } else {
      throw ConfigError(c.path_of("kind") + ": expected numeric or categorical");
    }
    spec.vocabulary = c.strings("vocabulary", {});
    c.finish();
    s.columns.push_back(std::move(spec));
  }
  s.label = r.string("label");
  s.classes = r.strings("classes", {});
  s.train_fraction = r.number("train_fraction", s.train_fraction);
  if (!(s.train_fraction > 0.0 && s.train_fraction < 1.0)) {
    throw ConfigError(r.path_of("train_fraction") + ": must be in (0, 1)");
  }
  s.split_seed = r.u64("split_seed", s.split_seed);
  if (r.has("embeddings")) {
    const Json& e = r.raw("embeddings");
    if (!e.is_object()) throw ConfigError(r.path_of("embeddings") + ": expected an object");
    for (const auto& item : e.items()) {
      if (!item.value().is_string()) {
        throw ConfigError(r.path_of("embeddings") + "." + item.key() + ": expected a file path");
      }
      s.embeddings.emplace_back(item.key(), item.value().get<std::string>());
    }
  }
  r.finish();
  return s;
}

FineTuneConfig parse_training(ObjectReader r) {
  FineTuneConfig t;
  t.learning_rate = r.number("learning_rate", t.learning_rate);
  t.batch_size = r.size("batch_size", t.batch_size);
  t.steps = r.size("steps", t.steps);
  t.seeds = r.u64s("seeds", t.seeds);
  t.weight_decay = r.number("weight_decay", t.weight_decay);
  t.context_fraction = r.number("context_fraction", t.context_fraction);
  r.finish();
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(r.path() + ": " + e.what());
  }
  return t;
}

PretrainSection parse_pretrain(ObjectReader r) {
  PretrainSection p;
  if (r.has("prior")) {
    ObjectReader pr = r.object("prior");
    PriorConfig& c = p.prior;
    c.features = count_range(pr, "features", c.features);
    c.samples = count_range(pr, "samples", c.samples);
    c.classes = count_range(pr, "classes", c.classes);
    c.layers = count_range(pr, "layers", c.layers);
    c.layer_width = count_range(pr, "layer_width", c.layer_width);
    c.noise = real_range(pr, "noise", c.noise);
    c.train_fraction = real_range(pr, "train_fraction", c.train_fraction);
    pr.finish();
    try {
      c.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(pr.path() + ": " + e.what());
    }
  }
  p.run.n_tasks = r.size("n_tasks", p.run.n_tasks);
  if (p.run.n_tasks == 0) throw ConfigError(r.path_of("n_tasks") + ": must be >= 1");
  p.run.learning_rate = r.number("learning_rate", p.run.learning_rate);
  p.run.optimizer.weight_decay = r.number("weight_decay", p.run.optimizer.weight_decay);
  p.run.seed = r.u64("seed", p.run.seed);
  p.prior.seed = p.run.seed;
  p.eval_tasks = r.size("eval_tasks", p.eval_tasks);
  p.eval_features = r.size("eval_features", p.eval_features);
  p.eval_train = r.size("eval_train", p.eval_train);
  p.eval_test = r.size("eval_test", p.eval_test);
  r.finish();
  return p;
}

ImbalanceSpec parse_mc_spec(ObjectReader r) {
  ImbalanceSpec s;
  s.n_nontabular = r.size("n_nontabular");
  s.n_tabular = r.size("n_tabular");
  s.c_nontabular = r.number("c_nontabular", s.c_nontabular);
  s.c_tabular = r.number("c_tabular", s.c_tabular);
  s.key_dim = r.size("key_dim", s.key_dim);
  s.distribution = score_distribution_from_string(r.string("distribution", "gaussian"));
  s.score_variance = r.number("score_variance", s.score_variance);
  s.samples = r.size("samples", s.samples);
  s.seed = r.u64("seed", s.seed);
  r.finish();
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(r.path() + ": " + e.what());
  }
  return s;
}

Json range_json(const CountRange& r) { return Json::array({r.min, r.max}); }
Json range_json(const RealRange& r) { return Json::array({r.min, r.max}); }

}  // namespace

std::filesystem::path ExperimentConfig::resolve(const std::string& relative) const {
  const std::filesystem::path p(relative);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir) {
  const Json root = json::parse(text, "config");
  ObjectReader r(root, "");
  ExperimentConfig cfg;
  cfg.base_dir = base_dir;
  if (r.has("task")) {
    ObjectReader task = r.object("task");
    if (task.has("csv")) {
      cfg.csv_task = parse_csv_source(task.object("csv"));
      task.finish();
    } else {
      cfg.synthetic_task = parse_task(task);
    }
  }
  if (r.has("model")) {
    ObjectReader m = r.object("model");
    if (m.has("backbone")) cfg.model.backbone = json::backbone_from_json(m.object("backbone"));
    cfg.model.max_categories = m.size("max_categories", cfg.model.max_categories);
    if (cfg.model.max_categories == 0) {
      throw ConfigError(m.path_of("max_categories") + ": must be >= 1");
    }
    cfg.model.seed = m.u64("seed", cfg.model.seed);
    cfg.model.use_tabular = m.boolean("use_tabular", cfg.model.use_tabular);
    cfg.model.pretrained = m.string("pretrained", "");
    m.finish();
  }
  if (r.has("projectors")) {
    const Json& p = r.raw("projectors");
    if (!p.is_object()) throw ConfigError("projectors: expected an object keyed by modality");
    for (const auto& item : p.items()) {
      cfg.projectors.emplace_back(
          item.key(), json::projector_from_json(ObjectReader(item.value(), "projectors." + item.key())));
    }
  }
  if (r.has("training")) cfg.training = parse_training(r.object("training"));
  if (r.has("views")) {
    std::set<std::string> names;
    for (ObjectReader v : r.objects("views")) {
      ViewSpec view;
      view.name = v.string("name");
      view.tabular = v.boolean("tabular", true);
      view.modalities = v.strings("modalities", {});
      v.finish();
      if (!names.insert(view.name).second) {
        throw ConfigError(v.path_of("name") + ": duplicate view name '" + view.name + "'");
      }
      for (const std::string& m : view.modalities) {
        const bool known = std::any_of(cfg.projectors.begin(), cfg.projectors.end(),
                                       [&m](const auto& p) { return p.first == m; });
        if (!known) throw ConfigError(v.path_of("modalities") + ": no projector for '" + m + "'");
      }
      if (!view.tabular && view.modalities.empty()) {
        throw ConfigError(v.path() + ": a view needs the tabular view or a modality");
      }
      cfg.views.push_back(std::move(view));
    }
  }
  if (r.has("pretrain")) cfg.pretrain = parse_pretrain(r.object("pretrain"));
  if (r.has("imbalance")) {
    ObjectReader im = r.object("imbalance");
    cfg.imbalance.modality = im.string("modality", cfg.imbalance.modality);
    cfg.imbalance.probe_block = im.size("probe_block", cfg.imbalance.probe_block);
    if (im.has("grid")) {
      for (ObjectReader g : im.objects("grid")) {
        cfg.imbalance.grid.push_back(json::projector_from_json(g));
      }
    }
    im.finish();
  }
  if (r.has("monte_carlo")) {
    for (ObjectReader s : r.objects("monte_carlo")) cfg.monte_carlo.push_back(parse_mc_spec(s));
  }
  cfg.probe_block = r.size("probe_block", cfg.probe_block);
  cfg.similarity_block = r.size("similarity_block", cfg.similarity_block);
  cfg.eval_checkpoint = r.string("eval_checkpoint", "");
  cfg.output_dir = r.string("output_dir", cfg.output_dir);
  r.finish();

  std::set<std::string> modality_names;
  for (const auto& [name, variant] : cfg.projectors) modality_names.insert(name);
  if (cfg.csv_task) {
    for (const auto& [name, path] : cfg.csv_task->embeddings) {
      if (!modality_names.count(name)) {
        throw ConfigError("task.csv.embeddings." + name + ": no projector configured for '" +
                          name + "'");
      }
    }
  }
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.parent_path());
}

std::string emit_config(const ExperimentConfig& cfg) {
  Json root;
  if (cfg.synthetic_task) {
    const TaskSpec& t = *cfg.synthetic_task;
    Json task;
    task["kind"] = to_string(t.kind);
    task["n_train"] = t.n_train;
    task["n_test"] = t.n_test;
    task["seed"] = t.seed;
    task["tabular_width"] = t.tabular_width;
    task["embed_dim"] = t.embed_dim;
    task["embed_noise"] = t.embed_noise;
    root["task"] = task;
  } else if (cfg.csv_task) {
    const CsvSource& s = *cfg.csv_task;
    Json csv;
    csv["path"] = s.path;
    csv["columns"] = Json::array();
    for (const ColumnSpec& c : s.columns) {
      Json col;
      col["name"] = c.name;
      col["kind"] = c.kind == ColumnKind::numeric ? "numeric" : "categorical";
      if (c.kind == ColumnKind::categorical) col["vocabulary"] = c.vocabulary;
      csv["columns"].push_back(col);
    }
    csv["label"] = s.label;
    csv["classes"] = s.classes;
    csv["train_fraction"] = s.train_fraction;
    csv["split_seed"] = s.split_seed;
    csv["embeddings"] = Json::object();
    for (const auto& [name, path] : s.embeddings) csv["embeddings"][name] = path;
    root["task"]["csv"] = csv;
  }
  Json model;
  model["backbone"] = json::to_json(cfg.model.backbone);
  model["max_categories"] = cfg.model.max_categories;
  model["seed"] = cfg.model.seed;
  model["use_tabular"] = cfg.model.use_tabular;
  model["pretrained"] = cfg.model.pretrained;
  root["model"] = model;
  root["projectors"] = Json::object();
  for (const auto& [name, variant] : cfg.projectors) root["projectors"][name] = json::to_json(variant);
  Json training;
  training["learning_rate"] = cfg.training.learning_rate;
  training["batch_size"] = cfg.training.batch_size;
  training["steps"] = cfg.training.steps;
  training["seeds"] = cfg.training.seeds;
  training["weight_decay"] = cfg.training.weight_decay;
  training["context_fraction"] = cfg.training.context_fraction;
  root["training"] = training;
  root["views"] = Json::array();
  for (const ViewSpec& v : cfg.views) {
    Json view;
    view["name"] = v.name;
    view["tabular"] = v.tabular;
    view["modalities"] = v.modalities;
    root["views"].push_back(view);
  }
  Json pretrain;
  const PriorConfig& p = cfg.pretrain.prior;
  pretrain["prior"]["features"] = range_json(p.features);
  pretrain["prior"]["samples"] = range_json(p.samples);
  pretrain["prior"]["classes"] = range_json(p.classes);
  pretrain["prior"]["layers"] = range_json(p.layers);
  pretrain["prior"]["layer_width"] = range_json(p.layer_width);
  pretrain["prior"]["noise"] = range_json(p.noise);
  pretrain["prior"]["train_fraction"] = range_json(p.train_fraction);
  pretrain["n_tasks"] = cfg.pretrain.run.n_tasks;
  pretrain["learning_rate"] = cfg.pretrain.run.learning_rate;
  pretrain["weight_decay"] = cfg.pretrain.run.optimizer.weight_decay;
  pretrain["seed"] = cfg.pretrain.run.seed;
  pretrain["eval_tasks"] = cfg.pretrain.eval_tasks;
  pretrain["eval_features"] = cfg.pretrain.eval_features;
  pretrain["eval_train"] = cfg.pretrain.eval_train;
  pretrain["eval_test"] = cfg.pretrain.eval_test;
  root["pretrain"] = pretrain;
  Json imbalance;
  imbalance["modality"] = cfg.imbalance.modality;
  imbalance["probe_block"] = cfg.imbalance.probe_block;
  imbalance["grid"] = Json::array();
  for (const ProjectorVariant& v : cfg.imbalance.grid) imbalance["grid"].push_back(json::to_json(v));
  root["imbalance"] = imbalance;
  root["monte_carlo"] = Json::array();
  for (const ImbalanceSpec& s : cfg.monte_carlo) {
    Json spec;
    spec["n_nontabular"] = s.n_nontabular;
    spec["n_tabular"] = s.n_tabular;
    spec["c_nontabular"] = s.c_nontabular;
    spec["c_tabular"] = s.c_tabular;
    spec["key_dim"] = s.key_dim;
    spec["distribution"] = to_string(s.distribution);
    spec["score_variance"] = s.score_variance;
    spec["samples"] = s.samples;
    spec["seed"] = s.seed;
    root["monte_carlo"].push_back(spec);
  }
  root["probe_block"] = cfg.probe_block;
  root["similarity_block"] = cfg.similarity_block;
  root["eval_checkpoint"] = cfg.eval_checkpoint;
  root["output_dir"] = cfg.output_dir;
  return root.dump(2) + "\n";
}

std::vector<ViewSpec> effective_views(const ExperimentConfig& cfg) {
  if (!cfg.views.empty()) return cfg.views;
  ViewSpec full;
  full.name = "full";
  full.tabular = cfg.model.use_tabular;
  for (const auto& [name, variant] : cfg.projectors) full.modalities.push_back(name);
  return {full};
}

void validate_for(const ExperimentConfig& cfg, const std::string& command) {
  auto need_file = [&cfg](const std::string& path, const std::string& key) {
    if (path.empty()) throw ConfigError(key + ": required for this command");
    if (!std::filesystem::exists(cfg.resolve(path))) {
      throw ConfigError(key + ": file not found: " + cfg.resolve(path).string());
    }
  };
  auto need_task = [&cfg]() {
    if (!cfg.synthetic_task && !cfg.csv_task) throw ConfigError("task: required for this command");
    if (cfg.csv_task) {
      if (!std::filesystem::exists(cfg.resolve(cfg.csv_task->path))) {
        throw ConfigError("task.csv.path: file not found: " +
                          cfg.resolve(cfg.csv_task->path).string());
      }
      for (const auto& [name, path] : cfg.csv_task->embeddings) {
        if (!std::filesystem::exists(cfg.resolve(path))) {
          throw ConfigError("task.csv.embeddings." + name + ": file not found: " +
                            cfg.resolve(path).string());
        }
      }
    }
  };
  if (command == "pretrain") {
    if (cfg.pretrain.prior.classes.max > cfg.model.backbone.max_classes) {
      throw ConfigError("pretrain.prior.classes: exceeds model.backbone.max_classes");
    }
    return;
  }
  if (command == "mc-attention") {
    if (cfg.monte_carlo.empty()) throw ConfigError("monte_carlo: at least one spec is required");
    return;
  }
  if (command == "finetune" || command == "imbalance-sweep" || command == "similarity") {
    need_task();
    if (!cfg.model.pretrained.empty()) need_file(cfg.model.pretrained, "model.pretrained");
    if (command == "imbalance-sweep" && cfg.imbalance.grid.empty()) {
      throw ConfigError("imbalance.grid: at least one variant is required");
    }
    return;
  }
  if (command == "eval") {
    need_task();
    need_file(cfg.eval_checkpoint, "eval_checkpoint");
    return;
  }
  throw ConfigError("unknown command '" + command + "'");
}

ModelSpec model_spec_for(const ExperimentConfig& cfg, const MultimodalDataset& data,
                         const ViewSpec& view) {
  ModelSpec spec;
  spec.backbone = cfg.model.backbone;
  spec.max_categories = cfg.model.max_categories;
  spec.seed = cfg.model.seed;
  spec.use_tabular = cfg.model.use_tabular && view.tabular && data.has_tabular();
  for (const std::string& name : view.modalities) {
    auto it = std::find_if(cfg.projectors.begin(), cfg.projectors.end(),
                           [&name](const auto& p) { return p.first == name; });
    if (it == cfg.projectors.end()) throw ConfigError("no projector configured for '" + name + "'");
    spec.modalities.push_back({name, data.modality(name).dim, it->second});
  }
  return spec;
}

MultimodalDataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.synthetic_task) {
    MultimodalDataset data = make_task(*cfg.synthetic_task);
    std::vector<std::string> names;
    for (const auto& [name, variant] : cfg.projectors) names.push_back(name);
    return data.select_views(true, names);
  }
  if (!cfg.csv_task) throw ConfigError("task: no task source configured");
  const CsvSource& src = *cfg.csv_task;
  const CsvTable csv = read_csv(cfg.resolve(src.path));
  std::vector<ColumnSpec> specs = src.columns;
  for (ColumnSpec& spec : specs) {
    if (spec.kind != ColumnKind::categorical || !spec.vocabulary.empty()) continue;
    const std::size_t col = csv.column(spec.name);
    std::set<std::string> values;
    for (const auto& row : csv.rows) {
      const std::string& v = row[col];
      if (!v.empty() && v != "NA" && v != "nan" && v != "NaN") values.insert(v);
    }
    spec.vocabulary.assign(values.begin(), values.end());
  }
  MultimodalDataset data;
  data.name = cfg.resolve(src.path).stem().string();
  data.tabular = table_from_csv(csv, specs);
  const std::size_t label_col = csv.column(src.label);
  std::vector<std::string> classes = src.classes;
  if (classes.empty()) {
    std::set<std::string> values;
    for (const auto& row : csv.rows) values.insert(row[label_col]);
    classes.assign(values.begin(), values.end());
  }
  data.n_classes = classes.size();
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    const std::string& v = csv.rows[i][label_col];
    auto it = std::find(classes.begin(), classes.end(), v);
    if (it == classes.end()) {
      throw DataError("row " + std::to_string(i) + ": label '" + v + "' is not a configured class");
    }
    data.labels.push_back(static_cast<std::size_t>(it - classes.begin()));
  }
  for (const auto& [name, path] : src.embeddings) {
    EmbeddingSet set = load_embedding_file(cfg.resolve(path));
    if (set.modality != name) {
      throw DataError(path + ": file holds modality '" + set.modality + "', config expects '" +
                      name + "'");
    }
    data.modalities.push_back(std::move(set));
  }
  Rng rng(src.split_seed);
  std::vector<std::size_t> order = permutation(data.rows(), rng);
  auto n_train = static_cast<std::size_t>(
      std::llround(src.train_fraction * static_cast<double>(data.rows())));
  n_train = std::clamp<std::size_t>(n_train, 1, data.rows() - 1);
  data.train_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  data.test_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(data.train_rows.begin(), data.train_rows.end());
  std::sort(data.test_rows.begin(), data.test_rows.end());
  data.validate();
  return data;
}

}  // namespace mmpfn
