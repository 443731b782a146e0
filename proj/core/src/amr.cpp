#include "amrlab/amr.hpp"

#include <cmath>
#include <numeric>

#include "amrlab/baselines.hpp"
#include "amrlab/errors.hpp"

namespace amrlab {

void AttributionTarget::validate(std::size_t num_modalities) const {
  if (ratios.size() != num_modalities) {
    throw ConfigError("amr.ratios needs " + std::to_string(num_modalities) +
                      " entries, got " + std::to_string(ratios.size()));
  }
  for (double r : ratios) {
    if (!(r > 0.0) || !std::isfinite(r)) {
      throw ConfigError("amr.ratios entries must be positive");
    }
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("amr.lambda must be >= 0");
  }
  if (!(lr > 0.0)) throw ConfigError("amr.lr must be > 0");
}

std::vector<double> AttributionTarget::normalized_ratios() const {
  const double total = std::accumulate(ratios.begin(), ratios.end(), 0.0);
  std::vector<double> out = ratios;
  for (double& r : out) r /= total;
  return out;
}

void AmrConfig::validate(std::size_t num_modalities) const {
  if (!enabled) return;
  if (num_modalities < 2) {
    throw ConfigError("amr.enabled requires at least two modalities");
  }
  target.validate(num_modalities);
  if (every_k_steps == 0) throw ConfigError("amr.every_k_steps must be >= 1");
}

namespace {

Tensor normalized_ratio_tensor(std::span<const double> ratios) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw InputError("attribution ratios must be positive");
    total += r;
  }
  std::vector<double> out(ratios.begin(), ratios.end());
  for (double& r : out) r /= total;
  return Tensor::vector(std::move(out));
}

}  // namespace

Tensor amr_loss(const Tensor& attribution, std::span<const double> ratios) {
  if (attribution.rank() != 1 || attribution.dim(0) != ratios.size()) {
    throw InputError("amr_loss: attribution has shape " +
                     shape_string(attribution.shape()) + " but " +
                     std::to_string(ratios.size()) + " ratios were given");
  }
  const std::size_t m = ratios.size();
  const Tensor share = div(attribution, expand(sum(attribution), 0, m));
  return sum(abs(sub(share, normalized_ratio_tensor(ratios))));
}

Tensor amr_loss_per_sample(const Tensor& per_sample, std::span<const double> ratios) {
  if (per_sample.rank() != 2 || per_sample.dim(1) != ratios.size()) {
    throw InputError("amr_loss_per_sample: shape does not match ratios");
  }
  const std::size_t batch = per_sample.dim(0);
  const std::size_t m = ratios.size();
  const Tensor share = div(per_sample, expand(sum(per_sample, 1), 1, m));
  const Tensor target = expand(normalized_ratio_tensor(ratios), 0, batch);
  return mean(sum(abs(sub(share, target)), 1));
}

AmrGradient amr_gradient(const MultimodalModel& model,
                         std::span<const Tensor> inputs, const AmrConfig& config,
                         std::span<const std::size_t> labels) {
  Graph graph;
  const ParamGroups groups = model.param_groups();
  // Encoder parameters stay constants: the regulariser cannot reach them.
  std::vector<Tensor> params(model.parameters().begin(), model.parameters().end());
  std::vector<Tensor> trainable;
  trainable.reserve(groups.fusion_classifier.size());
  for (std::size_t i : groups.fusion_classifier) {
    params[i] = graph.variable(params[i]);
    trainable.push_back(params[i]);
  }
  std::vector<Tensor> encodings;
  for (const Tensor& e : encode(model, params, inputs)) {
    encodings.push_back(graph.variable(e));
  }
  const Tensor logits = logits_from_encodings(model, params, encodings);

  AmrGradient out;
  AttributionReport report = attribution_report(
      logits, encodings, /*create_graph=*/true, config.attribution_class, labels);
  const Tensor loss =
      config.use_per_sample
          ? amr_loss_per_sample(report.per_sample, config.target.ratios)
          : amr_loss(report.batch_mean, config.target.ratios);
  out.loss = loss.item();
  for (Tensor& g : backward(loss, trainable)) out.grads.push_back(g.detach());
  out.report.per_sample = report.per_sample.detach();
  out.report.batch_mean = report.batch_mean.detach();
  out.report.raw_pooled = report.raw_pooled.detach();
  out.report.degenerate_count = report.degenerate_count;
  return out;
}

AmrStepReport amr_step(MultimodalModel& model, const MultimodalBatch& batch,
                       const AmrConfig& config) {
  config.target.validate(model.num_modalities());
  if (model.num_modalities() < 2) {
    throw ConfigError("the attribution regulariser needs at least two modalities");
  }
  AmrStepReport report;
  if (config.target.lambda == 0.0) {
    const AttributionReport attr =
        attribute(model, batch.inputs, config.attribution_class, batch.labels);
    report.loss = config.use_per_sample
                      ? amr_loss_per_sample(attr.per_sample, config.target.ratios).item()
                      : amr_loss(attr.batch_mean, config.target.ratios).item();
    report.attribution.assign(attr.batch_mean.data().begin(),
                              attr.batch_mean.data().end());
    report.degenerate_count = attr.degenerate_count;
    return report;
  }
  const AmrGradient grad = amr_gradient(model, batch.inputs, config, batch.labels);
  report.loss = grad.loss;
  report.attribution.assign(grad.report.batch_mean.data().begin(),
                            grad.report.batch_mean.data().end());
  report.degenerate_count = grad.report.degenerate_count;
  const ParamGroups groups = model.param_groups();
  sgd_step(model.mutable_parameters(), groups.fusion_classifier, grad.grads,
           config.target.lr * config.target.lambda);
  return report;
}

CombinedStepReport combined_training_step(MultimodalModel& model,
                                          const MultimodalBatch& batch,
                                          SgdMomentum& task_optimizer,
                                          const AmrConfig& config) {
  CombinedStepReport report;
  report.task_loss = naive_step(model, batch, task_optimizer).task_loss;
  report.amr_loss = amr_step(model, batch, config).loss;
  const AttributionReport after = attribute(model, batch.inputs);
  report.attribution.assign(after.batch_mean.data().begin(),
                            after.batch_mean.data().end());
  return report;
}

}  // namespace amrlab
