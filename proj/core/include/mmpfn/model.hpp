#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmpfn/backbone.hpp"
#include "mmpfn/checkpoint.hpp"
#include "mmpfn/dataset.hpp"
#include "mmpfn/encoders.hpp"
#include "mmpfn/projector.hpp"

namespace mmpfn {

struct ModalitySpec {
  std::string name;
  std::size_t encoder_dim = 0;
  ProjectorVariant projector;

  friend bool operator==(const ModalitySpec&, const ModalitySpec&) = default;
};

struct ModelSpec {
  BackboneConfig backbone;
  std::size_t max_categories = 32;
  std::uint64_t seed = 0;  // backbone and tabular encoder initialization
  bool use_tabular = true;
  std::vector<ModalitySpec> modalities;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Parameter name prefixes.
inline constexpr const char* kBackbonePrefix = "backbone";
inline constexpr const char* kTabularEncoderPrefix = "tabular_encoder";
inline constexpr const char* kProjectorPrefix = "projector";

// Frozen tabular encoder + one projector per modality + the PFN backbone.
class MultimodalModel {
 public:
  // Projector i is initialized from derive_seed(projector_seed, i).
  static MultimodalModel create(const ModelSpec& spec, std::uint64_t projector_seed);

  const ModelSpec& spec() const { return spec_; }
  BackboneParams& backbone() { return backbone_; }
  const BackboneParams& backbone() const { return backbone_; }
  const TabularEncoderParams& tabular_encoder() const { return tabular_encoder_; }
  std::vector<ModalityProjector>& projectors() { return projectors_; }
  const std::vector<ModalityProjector>& projectors() const { return projectors_; }

  // Projectors, backbone and decoder.
  ParamList trainable_parameters() const;
  // Modality encoders (the tabular cell encoder; embeddings are precomputed).
  ParamList frozen_parameters() const;
  ParamList all_parameters() const;

  // Tokens for the context rows followed by the query rows. Tabular statistics
  // come from the context rows only.
  FusedTable fuse(const MultimodalDataset& data, std::span<const std::size_t> context,
                  std::span<const std::size_t> query) const;
  CellGrid grid(const MultimodalDataset& data, std::span<const std::size_t> context,
                std::span<const std::size_t> query) const;
  // Logits[query, n_classes].
  Tensor logits(const MultimodalDataset& data, std::span<const std::size_t> context,
                std::span<const std::size_t> query, BlockCapture* capture = nullptr) const;

  // Rejects a dataset whose views do not match the spec.
  void check_compatible(const MultimodalDataset& data) const;

  Checkpoint checkpoint() const;
  // Rebuilds a model from a checkpoint written by checkpoint().
  static MultimodalModel from_checkpoint(const Checkpoint& ckpt);
  // Copies the backbone and tabular encoder out of a pretraining checkpoint.
  void load_pretrained(const Checkpoint& ckpt);

 private:
  ModelSpec spec_;
  BackboneParams backbone_;
  TabularEncoderParams tabular_encoder_;
  std::vector<ModalityProjector> projectors_;
};

struct ModalityOrthogonality {
  std::string modality;
  double metric = 0.0;
};

// orthogonality_metric of each multi-head projector's head outputs over the
// given rows; projectors with a single head are skipped.
std::vector<ModalityOrthogonality> head_orthogonality(const MultimodalModel& model,
                                                      const MultimodalDataset& data,
                                                      std::span<const std::size_t> rows);

// Backbone and tabular encoder as initialized for spec.seed; shared by
// pretraining and fine-tuning so that both see the same frozen encoder.
BackboneParams initial_backbone(const ModelSpec& spec);
TabularEncoderParams initial_tabular_encoder(const ModelSpec& spec);

// Checkpoint holding only a pretrained backbone and its tabular encoder.
Checkpoint pretrained_checkpoint(const ModelSpec& spec, const BackboneParams& backbone,
                                 const TabularEncoderParams& encoder);

std::string model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const std::string& text);

}  // namespace mmpfn
