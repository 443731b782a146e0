#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "amrlab/attribution.hpp"
#include "amrlab/data.hpp"
#include "amrlab/model.hpp"
#include "amrlab/optim.hpp"
#include "amrlab/tensor.hpp"

namespace amrlab {

// Desired attribution split r^1..r^M and the auxiliary step's settings.
struct AttributionTarget {
  std::vector<double> ratios{1.0, 1.0};
  double lambda = 1.0;
  double lr = 0.05;  // plain SGD, separate from the task optimizer

  // Throws ConfigError.
  void validate(std::size_t num_modalities) const;
  std::vector<double> normalized_ratios() const;
};

struct AmrConfig {
  bool enabled = false;
  AttributionTarget target;
  std::size_t every_k_steps = 1;
  // Penalise each sample's split instead of the batch mean.
  bool use_per_sample = false;
  AttributionClass attribution_class = AttributionClass::kPredicted;

  void validate(std::size_t num_modalities) const;
};

// sum_m | a^m / sum(a) - r^m / sum(r) |, in [0, 2]. Differentiable through
// any graph ancestors of `attribution` ([M]).
Tensor amr_loss(const Tensor& attribution, std::span<const double> ratios);

// Mean over samples of the per-row penalty for a [batch x M] table.
Tensor amr_loss_per_sample(const Tensor& per_sample, std::span<const double> ratios);

struct AmrStepReport {
  double loss = 0.0;
  std::vector<double> attribution;  // batch mean before the update
  std::size_t degenerate_count = 0;
};

// One regulariser update: attribution is computed with double
// backpropagation and lambda * loss is descended by plain SGD on the
// fusion/classifier parameters only. Encoder parameters are never touched.
AmrStepReport amr_step(MultimodalModel& model, const MultimodalBatch& batch,
                       const AmrConfig& config);

// Regulariser value and its gradient for each fusion/classifier parameter
// (in param_groups().fusion_classifier order), without updating anything.
struct AmrGradient {
  double loss = 0.0;
  std::vector<Tensor> grads;
  AttributionReport report;
};
AmrGradient amr_gradient(const MultimodalModel& model,
                         std::span<const Tensor> inputs, const AmrConfig& config,
                         std::span<const std::size_t> labels = {});

struct CombinedStepReport {
  double task_loss = 0.0;
  double amr_loss = 0.0;
  std::vector<double> attribution;  // batch mean after both updates
};

// Task step over all parameters, then the regulariser step, on one batch.
CombinedStepReport combined_training_step(MultimodalModel& model,
                                          const MultimodalBatch& batch,
                                          SgdMomentum& task_optimizer,
                                          const AmrConfig& config);

}  // namespace amrlab
