#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amrlab/tensor.hpp"

namespace amrlab {

enum class FusionKind { kConcatLinear };

struct ModelConfig {
  std::vector<std::size_t> modality_dims;
  std::size_t encoding_dim = 16;
  std::vector<std::size_t> encoder_hidden;
  FusionKind fusion = FusionKind::kConcatLinear;
  // Empty means the fusion layer emits the logits directly.
  std::vector<std::size_t> classifier_hidden;
  std::size_t num_classes = 2;
  std::uint64_t init_seed = 0;

  std::size_t num_modalities() const { return modality_dims.size(); }
  // Throws ConfigError.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

enum class ParamGroup { kEncoder, kFusionClassifier };

struct ParamInfo {
  std::string name;
  ParamGroup group;
  std::optional<std::size_t> modality;  // set for encoder parameters
};

// Indices into MultimodalModel::parameters().
struct ParamGroups {
  std::vector<std::size_t> encoder;
  std::vector<std::size_t> fusion_classifier;
};

// Per-forward dropout masks, already scaled by 1/(1-p) on kept units.
struct DropoutMasks {
  // encoder[m][l] multiplies the output of hidden layer l of encoder m.
  std::vector<std::vector<Tensor>> encoder;
  // Multiplies the post-activation fusion output. Unused when the fusion
  // layer emits logits.
  Tensor fused;
};

struct ForwardOptions {
  const DropoutMasks* dropout = nullptr;
  // One flag per modality; a dropped modality's encoding is replaced by
  // zeros. Empty keeps everything.
  std::vector<bool> modality_kept;
};

struct ForwardResult {
  std::vector<Tensor> encodings;  // [batch x encoding_dim] per modality
  Tensor logits;                  // [batch x C]
  Tensor probabilities;           // softmax of logits, detached
};

// Encoder MLPs (relu after every layer) per modality, concatenation followed
// by a linear fusion layer, and an MLP classifier head. Linear layers compute
// x * W + b with W stored [in x out].
class MultimodalModel {
 public:
  // Scaled-uniform weights, zero biases; fully determined by init_seed.
  explicit MultimodalModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  std::size_t num_modalities() const { return config_.num_modalities(); }

  std::span<const Tensor> parameters() const { return params_; }
  std::vector<Tensor>& mutable_parameters() { return params_; }
  const std::vector<ParamInfo>& parameter_info() const { return info_; }

  ParamGroups param_groups() const;

  // Parameter index ranges for the building blocks, in declaration order.
  std::size_t encoder_layer_count() const {
    return config_.encoder_hidden.size() + 1;
  }
  std::size_t encoder_weight_index(std::size_t modality, std::size_t layer) const;
  std::size_t fusion_weight_index() const;
  std::size_t classifier_weight_index(std::size_t layer) const;
  // Rows of the fusion weight that read modality m's encoding.
  std::pair<std::size_t, std::size_t> fusion_rows(std::size_t modality) const;

  bool identical(const MultimodalModel& other) const;

 private:
  ModelConfig config_;
  std::vector<Tensor> params_;
  std::vector<ParamInfo> info_;
};

MultimodalModel init_model(const ModelConfig& config);

// Graph variables for every parameter, in declaration order.
std::vector<Tensor> bind_parameters(Graph& graph, const MultimodalModel& model);

// Runs the network with the given parameter tensors (bound variables or the
// model's own constants). Throws InputError on modality count or width
// mismatch.
ForwardResult forward(const MultimodalModel& model,
                      std::span<const Tensor> params,
                      std::span<const Tensor> inputs,
                      const ForwardOptions& options = {});
ForwardResult forward(const MultimodalModel& model,
                      std::span<const Tensor> inputs,
                      const ForwardOptions& options = {});

// Encoder outputs only.
std::vector<Tensor> encode(const MultimodalModel& model,
                           std::span<const Tensor> params,
                           std::span<const Tensor> inputs,
                           const ForwardOptions& options = {});

// Fusion and classifier only, starting from caller-supplied encodings.
Tensor logits_from_encodings(const MultimodalModel& model,
                             std::span<const Tensor> params,
                             std::span<const Tensor> encodings,
                             const ForwardOptions& options = {});

// Fresh single-modality model with encoder m's architecture.
MultimodalModel unimodal_view(const MultimodalModel& model, std::size_t modality);

// Checkpoint: "AMRLAB1", config record, then parameter tensors in declaration
// order as little-endian f64.
void save_checkpoint(const MultimodalModel& model,
                     const std::filesystem::path& path);
MultimodalModel load_checkpoint(const std::filesystem::path& path);

}  // namespace amrlab
