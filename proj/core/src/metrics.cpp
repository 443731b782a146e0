#include "amrlab/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "amrlab/attribution.hpp"
#include "amrlab/errors.hpp"

namespace amrlab {

namespace {

constexpr std::size_t kEvalChunk = 512;

void require_table(const Tensor& t, std::span<const std::size_t> labels,
                   const char* what) {
  if (t.rank() != 2 || t.dim(0) != labels.size()) {
    throw DimensionError(std::string(what) + ": need one row per label");
  }
}

}  // namespace

double accuracy(const Tensor& probabilities, std::span<const std::size_t> labels) {
  require_table(probabilities, labels, "accuracy");
  const std::size_t classes = probabilities.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (probabilities.at(i, c) > probabilities.at(i, best)) best = c;
    }
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double mean_average_precision(const Tensor& scores,
                              std::span<const std::size_t> labels) {
  require_table(scores, labels, "mean_average_precision");
  const std::size_t n = labels.size();
  const std::size_t classes = scores.dim(1);
  std::vector<std::size_t> order(n);
  double total = 0.0;
  std::size_t evaluated = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores.at(a, c) > scores.at(b, c);
    });
    double precision_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 0; rank < n; ++rank) {
      if (labels[order[rank]] == c) {
        ++hits;
        precision_sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
      }
    }
    if (hits == 0) continue;
    total += precision_sum / static_cast<double>(hits);
    ++evaluated;
  }
  if (evaluated == 0) throw NumericError("mAP undefined: no class has a positive");
  return total / static_cast<double>(evaluated);
}

MetricsReport evaluate(const MultimodalModel& model, const Dataset& dataset,
                       const std::optional<AttributionTarget>& target) {
  if (dataset.size() == 0) throw InputError("cannot evaluate an empty dataset");
  if (dataset.num_modalities() != model.num_modalities()) {
    throw InputError("dataset and model disagree on modality count");
  }
  const std::size_t n = dataset.size();
  const std::size_t modalities = model.num_modalities();
  const std::size_t classes = model.config().num_classes;

  std::vector<double> probs;
  probs.reserve(n * classes);
  std::vector<double> attribution_sum(modalities, 0.0);
  MetricsReport report;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    const std::size_t end = std::min(n, start + kEvalChunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const MultimodalBatch batch = make_batch(dataset, idx);
    const ForwardResult fwd = forward(model, batch.inputs);
    probs.insert(probs.end(), fwd.probabilities.data().begin(),
                 fwd.probabilities.data().end());
    const AttributionReport attr = attribute(model, batch.inputs);
    for (std::size_t i = 0; i < attr.per_sample.dim(0); ++i) {
      for (std::size_t m = 0; m < modalities; ++m) {
        attribution_sum[m] += attr.per_sample.at(i, m);
      }
    }
    report.degenerate_count += attr.degenerate_count;
  }
  const Tensor probabilities({n, classes}, std::move(probs));
  report.accuracy = accuracy(probabilities, dataset.labels);
  report.mean_average_precision = mean_average_precision(probabilities, dataset.labels);
  for (double& a : attribution_sum) a /= static_cast<double>(n);
  report.attribution = attribution_sum;
  report.dominance = dominance_string(report.attribution);
  if (target) {
    report.amr_loss = amr_loss(Tensor::vector(report.attribution), target->ratios).item();
  }
  return report;
}

}  // namespace amrlab
