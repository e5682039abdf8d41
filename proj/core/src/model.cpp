#include "mmpfn/model.hpp"

#include "json_util.hpp"
#include "mmpfn/error.hpp"
#include "mmpfn/rng.hpp"

namespace mmpfn {

namespace {

std::vector<std::size_t> joined(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  std::vector<std::size_t> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

BackboneParams initial_backbone(const ModelSpec& spec) {
  return BackboneParams::create(spec.backbone, derive_seed(spec.seed, 0));
}

TabularEncoderParams initial_tabular_encoder(const ModelSpec& spec) {
  return TabularEncoderParams::create(spec.backbone.model_dim, spec.max_categories,
                                      derive_seed(spec.seed, 1));
}

MultimodalModel MultimodalModel::create(const ModelSpec& spec, std::uint64_t projector_seed) {
  if (!spec.use_tabular && spec.modalities.empty()) {
    throw ConfigError("model needs the tabular view or at least one modality");
  }
  MultimodalModel model;
  model.spec_ = spec;
  model.backbone_ = initial_backbone(spec);
  model.tabular_encoder_ = initial_tabular_encoder(spec);
  for (std::size_t i = 0; i < spec.modalities.size(); ++i) {
    const ModalitySpec& m = spec.modalities[i];
    if (m.encoder_dim == 0) throw ConfigError("modality '" + m.name + "' has encoder_dim 0");
    for (std::size_t j = 0; j < i; ++j) {
      if (spec.modalities[j].name == m.name) {
        throw ConfigError("duplicate modality name '" + m.name + "'");
      }
    }
    model.projectors_.push_back(ModalityProjector::create(
        m.projector, m.encoder_dim, spec.backbone.model_dim, derive_seed(projector_seed, i)));
    model.spec_.modalities[i].projector = model.projectors_.back().variant();
  }
  return model;
}

ParamList MultimodalModel::trainable_parameters() const {
  ParamList out;
  for (std::size_t i = 0; i < projectors_.size(); ++i) {
    for (NamedTensor& p :
         projectors_[i].parameters(std::string(kProjectorPrefix) + "." + spec_.modalities[i].name)) {
      out.push_back(std::move(p));
    }
  }
  for (NamedTensor& p : backbone_.parameters(kBackbonePrefix)) out.push_back(std::move(p));
  return out;
}

ParamList MultimodalModel::frozen_parameters() const {
  ParamList out;
  tabular_encoder_.collect(kTabularEncoderPrefix, out);
  return out;
}

ParamList MultimodalModel::all_parameters() const {
  ParamList out = frozen_parameters();
  for (NamedTensor& p : trainable_parameters()) out.push_back(std::move(p));
  return out;
}

void MultimodalModel::check_compatible(const MultimodalDataset& data) const {
  if (data.n_classes > spec_.backbone.max_classes) {
    throw DataError("dataset has " + std::to_string(data.n_classes) +
                    " classes, the backbone supports at most " +
                    std::to_string(spec_.backbone.max_classes));
  }
  if (spec_.use_tabular && !data.has_tabular()) {
    throw DataError("model expects a tabular view but the dataset has no tabular columns");
  }
  for (const ModalitySpec& m : spec_.modalities) {
    const EmbeddingSet& set = data.modality(m.name);
    if (set.dim != m.encoder_dim) {
      throw DataError("modality '" + m.name + "' has dim " + std::to_string(set.dim) +
                      ", model expects " + std::to_string(m.encoder_dim));
    }
  }
}

FusedTable MultimodalModel::fuse(const MultimodalDataset& data, std::span<const std::size_t> context,
                                 std::span<const std::size_t> query) const {
  check_compatible(data);
  const std::vector<std::size_t> rows = joined(context, query);
  Tensor tabular;
  if (spec_.use_tabular) {
    const TabularStats stats = fit_tabular_stats(data.tabular, context);
    tabular = gather_rows(tabular_encode(data.tabular, stats, tabular_encoder_), rows);
  }
  std::vector<ModalityTokens> parts;
  for (std::size_t i = 0; i < projectors_.size(); ++i) {
    const std::string& name = spec_.modalities[i].name;
    parts.push_back({name, projectors_[i].forward(data.modality(name).rows(rows))});
  }
  return fuse_tokens(tabular, parts);
}

CellGrid MultimodalModel::grid(const MultimodalDataset& data, std::span<const std::size_t> context,
                               std::span<const std::size_t> query) const {
  const FusedTable fused = fuse(data, context, query);
  std::vector<std::size_t> context_labels;
  for (std::size_t r : context) context_labels.push_back(data.labels[r]);
  CellGrid g = embed_cells(fused.tokens, context_labels, data.n_classes, backbone_);
  g.n_test = query.size();
  return g;
}

Tensor MultimodalModel::logits(const MultimodalDataset& data, std::span<const std::size_t> context,
                               std::span<const std::size_t> query, BlockCapture* capture) const {
  const CellGrid g = grid(data, context, query);
  const BoolMatrix mask = build_incontext_mask(g.n_train, g.n_test);
  return decode(run_blocks(g, mask, backbone_, capture), backbone_, data.n_classes);
}

Checkpoint MultimodalModel::checkpoint() const {
  Checkpoint ckpt;
  json::Json meta;
  meta["kind"] = "model";
  meta["spec"] = json::parse(model_spec_to_json(spec_), "model spec");
  ckpt.meta_json = meta.dump();
  ckpt.tensors = all_parameters();
  return ckpt;
}

MultimodalModel MultimodalModel::from_checkpoint(const Checkpoint& ckpt) {
  const json::Json meta = json::parse(ckpt.meta_json, "checkpoint meta");
  if (!meta.is_object() || meta.value("kind", "") != "model" || !meta.contains("spec")) {
    throw DataError("checkpoint does not hold a fine-tuned model (meta.kind != \"model\")");
  }
  MultimodalModel model = create(model_spec_from_json(meta["spec"].dump()), 0);
  load_parameters(ckpt, model.all_parameters());
  return model;
}

void MultimodalModel::load_pretrained(const Checkpoint& ckpt) {
  const json::Json meta = json::parse(ckpt.meta_json, "checkpoint meta");
  if (!meta.is_object() || !meta.contains("backbone")) {
    throw DataError("pretrained checkpoint has no backbone description in its meta");
  }
  const BackboneConfig cfg =
      json::backbone_from_json(json::ObjectReader(meta["backbone"], "meta.backbone"));
  if (!(cfg == spec_.backbone)) {
    throw DataError("pretrained checkpoint backbone " + meta["backbone"].dump() +
                    " differs from the configured backbone " +
                    json::to_json(spec_.backbone).dump());
  }
  ParamList targets = frozen_parameters();
  for (NamedTensor& p : backbone_.parameters(kBackbonePrefix)) targets.push_back(std::move(p));
  load_parameters(ckpt, targets);
}

Checkpoint pretrained_checkpoint(const ModelSpec& spec, const BackboneParams& backbone,
                                 const TabularEncoderParams& encoder) {
  Checkpoint ckpt;
  json::Json meta;
  meta["kind"] = "pretrained";
  meta["backbone"] = json::to_json(spec.backbone);
  meta["max_categories"] = spec.max_categories;
  meta["seed"] = spec.seed;
  ckpt.meta_json = meta.dump();
  encoder.collect(kTabularEncoderPrefix, ckpt.tensors);
  for (NamedTensor& p : backbone.parameters(kBackbonePrefix)) ckpt.tensors.push_back(std::move(p));
  return ckpt;
}

std::string model_spec_to_json(const ModelSpec& spec) {
  json::Json j;
  j["backbone"] = json::to_json(spec.backbone);
  j["max_categories"] = spec.max_categories;
  j["seed"] = spec.seed;
  j["use_tabular"] = spec.use_tabular;
  j["modalities"] = json::Json::array();
  for (const ModalitySpec& m : spec.modalities) {
    json::Json e;
    e["name"] = m.name;
    e["encoder_dim"] = m.encoder_dim;
    e["projector"] = json::to_json(m.projector);
    j["modalities"].push_back(e);
  }
  return j.dump();
}

ModelSpec model_spec_from_json(const std::string& text) {
  const json::Json j = json::parse(text, "model spec");
  json::ObjectReader r(j, "spec");
  ModelSpec spec;
  spec.backbone = json::backbone_from_json(r.object("backbone"));
  spec.max_categories = r.size("max_categories");
  spec.seed = r.u64("seed", 0);
  spec.use_tabular = r.boolean("use_tabular", true);
  for (json::ObjectReader m : r.objects("modalities")) {
    ModalitySpec ms;
    ms.name = m.string("name");
    ms.encoder_dim = m.size("encoder_dim");
    ms.projector = json::projector_from_json(m.object("projector"));
    m.finish();
    spec.modalities.push_back(ms);
  }
  r.finish();
  return spec;
}

std::vector<ModalityOrthogonality> head_orthogonality(const MultimodalModel& model,
                                                      const MultimodalDataset& data,
                                                      std::span<const std::size_t> rows) {
  NoGradGuard no_grad;
  std::vector<ModalityOrthogonality> out;
  const auto& specs = model.spec().modalities;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].projector.heads < 2) continue;
    const Tensor heads = model.projectors()[i].head_outputs(data.modality(specs[i].name).rows(rows));
    out.push_back({specs[i].name, orthogonality_metric(heads)});
  }
  return out;
}

}  // namespace mmpfn
