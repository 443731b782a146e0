#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "amrlab/model.hpp"
#include "amrlab/tensor.hpp"

namespace amrlab {

// Which logit the attribution explains.
enum class AttributionClass {
  kPredicted,  // max logit, argmax frozen
  kTrueLabel,
};

// Per-modality attribution summary for one batch.
struct AttributionReport {
  Tensor per_sample;  // [batch x M], rows sum to 1
  Tensor batch_mean;  // [M]
  Tensor raw_pooled;  // [batch x M], L2-pooled before normalisation
  std::size_t degenerate_count = 0;
};

// grad (.) input at the encoding layer: for every sample, the selected logit
// is differentiated with respect to each modality's encoding and multiplied
// elementwise by that encoding. `encodings` and `logits` must live on the
// same graph. With create_graph the result stays differentiable with respect
// to the parameters that produced `logits`.
std::vector<Tensor> grad_times_input(const Tensor& logits,
                                     std::span<const Tensor> encodings,
                                     bool create_graph,
                                     AttributionClass target = AttributionClass::kPredicted,
                                     std::span<const std::size_t> labels = {});

// Convenience form: runs the encoders with the model's own parameters and
// attributes at the resulting encodings. Result is [batch x dim] per modality.
std::vector<Tensor> grad_times_input(const MultimodalModel& model,
                                     std::span<const Tensor> inputs,
                                     AttributionClass target = AttributionClass::kPredicted,
                                     std::span<const std::size_t> labels = {});

// L2 norm of each modality's attribution vector, per sample: [batch x M].
Tensor pool_l2(std::span<const Tensor> attributions);

struct NormalizedAttribution {
  Tensor per_sample;
  std::size_t degenerate_count = 0;
};

// Rows with sum below this fall back to the uniform split.
inline constexpr double kDegenerateRowSum = 1e-12;

// Divides each row by its sum. Throws InternalError on negative input.
NormalizedAttribution normalize_per_sample(const Tensor& pooled);

// Column means of a normalised [batch x M] matrix.
Tensor aggregate_batch(const Tensor& per_sample);

// Full pipeline on a graph: grad (.) input, pooling, normalisation, mean.
AttributionReport attribution_report(const Tensor& logits,
                                     std::span<const Tensor> encodings,
                                     bool create_graph,
                                     AttributionClass target = AttributionClass::kPredicted,
                                     std::span<const std::size_t> labels = {});

// Same, evaluated on the model's current parameters; values only.
AttributionReport attribute(const MultimodalModel& model,
                            std::span<const Tensor> inputs,
                            AttributionClass target = AttributionClass::kPredicted,
                            std::span<const std::size_t> labels = {});

// "74/26"-style integer percentages; rounding residue goes to the largest
// component so the entries sum to 100.
std::string dominance_string(std::span<const double> attribution);

// CSV with columns sample_index,modality_index,pooled,normalized.
void write_attribution_csv(std::ostream& out, const Tensor& raw_pooled,
                           const Tensor& per_sample, std::size_t first_index = 0,
                           bool header = true);

}  // namespace amrlab
