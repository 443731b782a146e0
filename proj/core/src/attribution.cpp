#include "amrlab/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

#include "amrlab/errors.hpp"

namespace amrlab {

std::vector<Tensor> grad_times_input(const Tensor& logits,
                                     std::span<const Tensor> encodings,
                                     bool create_graph, AttributionClass target,
                                     std::span<const std::size_t> labels) {
  if (logits.rank() != 2) {
    throw DimensionError("grad_times_input expects [batch x C] logits");
  }
  Tensor selected;
  if (target == AttributionClass::kPredicted) {
    selected = max_with_argmax(logits, 1).values;
  } else {
    if (labels.size() != logits.dim(0)) {
      throw InputError("true-label attribution needs one label per sample");
    }
    selected = sum(mul(logits, one_hot(labels, logits.dim(1))), 1);
  }
  // Samples do not interact, so the gradient of the batch sum at e_i is the
  // gradient of sample i's own logit.
  const std::vector<Tensor> grads =
      backward(sum(selected), encodings, create_graph);
  std::vector<Tensor> result;
  result.reserve(encodings.size());
  for (std::size_t m = 0; m < encodings.size(); ++m) {
    result.push_back(mul(grads[m], encodings[m]));
  }
  return result;
}

namespace {

// Graph with the encodings injected as leaves, evaluated on the model's own
// parameters.
struct InjectedForward {
  std::vector<Tensor> encodings;
  Tensor logits;
};

InjectedForward inject(Graph& graph, const MultimodalModel& model,
                       std::span<const Tensor> inputs) {
  const ForwardResult plain = forward(model, inputs);
  InjectedForward out;
  for (const Tensor& e : plain.encodings) out.encodings.push_back(graph.variable(e));
  out.logits = logits_from_encodings(model, model.parameters(), out.encodings);
  return out;
}

std::vector<Tensor> detach_all(const std::vector<Tensor>& ts) {
  std::vector<Tensor> out;
  out.reserve(ts.size());
  for (const Tensor& t : ts) out.push_back(t.detach());
  return out;
}

}  // namespace

std::vector<Tensor> grad_times_input(const MultimodalModel& model,
                                     std::span<const Tensor> inputs,
                                     AttributionClass target,
                                     std::span<const std::size_t> labels) {
  Graph graph;
  const InjectedForward fwd = inject(graph, model, inputs);
  return detach_all(
      grad_times_input(fwd.logits, fwd.encodings, false, target, labels));
}

Tensor pool_l2(std::span<const Tensor> attributions) {
  if (attributions.empty()) throw InputError("pool_l2: no modalities");
  std::vector<Tensor> columns;
  columns.reserve(attributions.size());
  for (const Tensor& a : attributions) {
    if (a.rank() != 2) throw DimensionError("pool_l2 expects [batch x dim]");
    columns.push_back(reshape(l2_norm(a, 1), {a.dim(0), 1}));
  }
  return concat_cols(columns);
}

NormalizedAttribution normalize_per_sample(const Tensor& pooled) {
  if (pooled.rank() != 2) {
    throw DimensionError("normalize_per_sample expects [batch x M]");
  }
  const std::size_t batch = pooled.dim(0);
  const std::size_t modalities = pooled.dim(1);
  for (double v : pooled.data()) {
    if (v < 0.0) throw InternalError("pooled attribution is negative");
  }
  const Tensor row_sum = sum(pooled, 1);
  std::vector<double> degenerate(batch, 0.0);
  std::vector<double> keep(batch * modalities, 1.0);
  std::vector<double> fallback(batch * modalities, 0.0);
  NormalizedAttribution result;
  for (std::size_t i = 0; i < batch; ++i) {
    if (row_sum[i] < kDegenerateRowSum) {
      degenerate[i] = 1.0;
      ++result.degenerate_count;
      for (std::size_t m = 0; m < modalities; ++m) {
        keep[i * modalities + m] = 0.0;
        fallback[i * modalities + m] = 1.0 / static_cast<double>(modalities);
      }
    }
  }
  // Degenerate rows get denominator sum + 1 (never zero) and are then
  // overwritten with the uniform split.
  const Tensor denom = add(row_sum, Tensor({batch}, std::move(degenerate)));
  const Tensor ratio = div(pooled, expand(denom, 1, modalities));
  result.per_sample =
      add(mul(ratio, Tensor(pooled.shape(), std::move(keep))),
          Tensor(pooled.shape(), std::move(fallback)));
  return result;
}

Tensor aggregate_batch(const Tensor& per_sample) {
  if (per_sample.rank() != 2 || per_sample.numel() == 0) {
    throw InputError("aggregate_batch needs a non-empty [batch x M] matrix");
  }
  return mean(per_sample, 0);
}

AttributionReport attribution_report(const Tensor& logits,
                                     std::span<const Tensor> encodings,
                                     bool create_graph, AttributionClass target,
                                     std::span<const std::size_t> labels) {
  const std::vector<Tensor> alpha =
      grad_times_input(logits, encodings, create_graph, target, labels);
  AttributionReport report;
  report.raw_pooled = pool_l2(alpha);
  NormalizedAttribution normalized = normalize_per_sample(report.raw_pooled);
  report.per_sample = normalized.per_sample;
  report.degenerate_count = normalized.degenerate_count;
  report.batch_mean = aggregate_batch(report.per_sample);
  return report;
}

AttributionReport attribute(const MultimodalModel& model,
                            std::span<const Tensor> inputs,
                            AttributionClass target,
                            std::span<const std::size_t> labels) {
  Graph graph;
  const InjectedForward fwd = inject(graph, model, inputs);
  AttributionReport report =
      attribution_report(fwd.logits, fwd.encodings, false, target, labels);
  report.per_sample = report.per_sample.detach();
  report.batch_mean = report.batch_mean.detach();
  report.raw_pooled = report.raw_pooled.detach();
  return report;
}

std::string dominance_string(std::span<const double> attribution) {
  if (attribution.empty()) return "";
  std::vector<long> pct;
  pct.reserve(attribution.size());
  long total = 0;
  for (double a : attribution) {
    pct.push_back(std::lround(100.0 * a));
    total += pct.back();
  }
  const auto largest = static_cast<std::size_t>(
      std::max_element(attribution.begin(), attribution.end()) -
      attribution.begin());
  pct[largest] += 100 - total;
  std::string out;
  for (std::size_t m = 0; m < pct.size(); ++m) {
    if (m) out += "/";
    out += std::to_string(pct[m]);
  }
  return out;
}

void write_attribution_csv(std::ostream& out, const Tensor& raw_pooled,
                           const Tensor& per_sample, std::size_t first_index,
                           bool header) {
  if (raw_pooled.shape() != per_sample.shape() || raw_pooled.rank() != 2) {
    throw DimensionError("attribution CSV needs matching [batch x M] tables");
  }
  if (header) out << "sample_index,modality_index,pooled,normalized\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < raw_pooled.dim(0); ++i) {
    for (std::size_t m = 0; m < raw_pooled.dim(1); ++m) {
      out << first_index + i << ',' << m << ',' << raw_pooled.at(i, m) << ','
          << per_sample.at(i, m) << '\n';
    }
  }
}

}  // namespace amrlab
