#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amrlab/amr.hpp"
#include "amrlab/data.hpp"
#include "amrlab/model.hpp"
#include "amrlab/tensor.hpp"

namespace amrlab {

// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Tensor& probabilities, std::span<const std::size_t> labels);

// Macro average over classes with at least one positive of the average
// precision from a full ranking by score (descending, ties by sample index).
// Throws NumericError when no class has a positive.
double mean_average_precision(const Tensor& scores,
                              std::span<const std::size_t> labels);

struct MetricsReport {
  std::size_t step = 0;
  double accuracy = 0.0;
  double mean_average_precision = 0.0;
  std::vector<double> attribution;  // mean normalised split on the split
  std::string dominance;
  double task_loss = 0.0;  // mean training loss since the previous report
  double amr_loss = 0.0;
  std::size_t degenerate_count = 0;
};

// Forward pass over the whole dataset without dropout. When `target` is
// given, amr_loss holds the regulariser value of the dataset attribution.
// Leaves the model untouched.
MetricsReport evaluate(const MultimodalModel& model, const Dataset& dataset,
                       const std::optional<AttributionTarget>& target = std::nullopt);

}  // namespace amrlab
