#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "amrlab/tensor.hpp"

namespace amrlab {

enum class Split { kTrain, kVal };

std::string split_name(Split split);

// Per-class Gaussian prototypes per modality: x^m = s_m * mu_y^m + N(0, sigma_m^2).
struct SyntheticConfig {
  std::size_t num_classes = 6;
  std::size_t train_samples = 3000;
  std::size_t val_samples = 600;
  std::vector<std::size_t> modality_dims{16, 16};
  std::vector<double> signal{4.0, 1.0};
  std::vector<double> noise{1.0, 1.0};
  double label_noise = 0.0;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
};

// Row-major per-modality feature blocks stored as f32, the on-disk precision.
struct Dataset {
  std::vector<std::size_t> dims;
  std::size_t num_classes = 0;
  std::vector<std::vector<float>> features;  // features[m]: size() x dims[m]
  std::vector<std::size_t> labels;
  Split split = Split::kTrain;

  std::size_t size() const { return labels.size(); }
  std::size_t num_modalities() const { return dims.size(); }

  // Throws DataError when an invariant is broken.
  void validate() const;

  // [rows x dims[m]] tensor of the selected rows.
  Tensor rows(std::size_t modality, std::span<const std::size_t> indices) const;
  Tensor all_rows(std::size_t modality) const;

  // Single-modality copy, for unimodal training.
  Dataset select_modality(std::size_t modality) const;

  bool operator==(const Dataset&) const = default;
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
};

struct MultimodalBatch {
  std::vector<Tensor> inputs;  // [B x dims[m]]
  std::vector<std::size_t> labels;
  std::vector<std::size_t> indices;  // source rows in the dataset

  std::size_t size() const { return labels.size(); }
};

DatasetSplits generate_synthetic(const SyntheticConfig& config);

// AMRDATA1 binary format: magic, M (u32), C (u32), N (u64), dims[M] (u32),
// per-modality row-major N x dim f32 blocks, then N u32 labels.
void save_feature_file(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_feature_file(const std::filesystem::path& path,
                          Split split = Split::kTrain);

// CSV with header label,m0_0,...,m1_0,... . The class count is taken from
// `num_classes` when nonzero, otherwise from the largest label.
Dataset load_feature_csv(const std::filesystem::path& path,
                         std::size_t num_classes = 0, Split split = Split::kTrain);

// One epoch of batches in a seeded shuffled order; the final batch may be
// short.
std::vector<MultimodalBatch> batches(const Dataset& dataset,
                                     std::size_t batch_size,
                                     std::uint64_t shuffle_seed);

// Batch of the given rows, in order.
MultimodalBatch make_batch(const Dataset& dataset,
                           std::span<const std::size_t> indices);

}  // namespace amrlab
