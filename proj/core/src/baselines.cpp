#include "amrlab/baselines.hpp"

#include <cmath>

#include "amrlab/attribution.hpp"
#include "amrlab/errors.hpp"

namespace amrlab {

void StrategyConfig::validate(std::size_t num_modalities) const {
  switch (kind) {
    case StrategyKind::kNaive:
      break;
    case StrategyKind::kUnimodal:
      if (modality >= num_modalities) {
        throw ConfigError("unimodal.modality out of range");
      }
      break;
    case StrategyKind::kDropout:
      if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
        throw ConfigError("dropout.p must lie in [0, 1)");
      }
      break;
    case StrategyKind::kModalityDropout: {
      if (num_modalities < 2) {
        throw ConfigError("modality dropout needs at least two modalities");
      }
      const double limit = static_cast<double>(num_modalities - 1) /
                           static_cast<double>(num_modalities);
      if (!(mdrop_p >= 0.0 && mdrop_p <= limit)) {
        throw ConfigError("mdrop.p must lie in [0, " + std::to_string(limit) +
                          "] for " + std::to_string(num_modalities) +
                          " modalities");
      }
      break;
    }
    case StrategyKind::kUmt:
      if (!(umt_tau > 0.0)) throw ConfigError("umt.tau must be > 0");
      if (!(umt_beta >= 0.0)) throw ConfigError("umt.beta must be >= 0");
      break;
    case StrategyKind::kOgm:
      if (!(ogm_alpha >= 0.0)) throw ConfigError("ogm.alpha must be >= 0");
      if (num_modalities < 2) throw ConfigError("OGM needs at least two modalities");
      break;
  }
}

std::string StrategyConfig::label() const {
  switch (kind) {
    case StrategyKind::kNaive:
      return "naive";
    case StrategyKind::kUnimodal:
      return "unimodal" + std::to_string(modality);
    case StrategyKind::kDropout:
      return "dropout";
    case StrategyKind::kModalityDropout:
      return "modality_dropout";
    case StrategyKind::kUmt:
      return "umt";
    case StrategyKind::kOgm:
      return "ogm_simplified";
  }
  return "unknown";
}

StrategyKind parse_strategy_kind(const std::string& name) {
  if (name == "naive") return StrategyKind::kNaive;
  if (name == "unimodal") return StrategyKind::kUnimodal;
  if (name == "dropout") return StrategyKind::kDropout;
  if (name == "modality_dropout" || name == "mdrop") {
    return StrategyKind::kModalityDropout;
  }
  if (name == "umt") return StrategyKind::kUmt;
  if (name == "ogm" || name == "ogm_simplified") return StrategyKind::kOgm;
  throw ConfigError("unknown strategy '" + name + "'");
}

StepReport naive_step(MultimodalModel& model, const MultimodalBatch& batch,
                      SgdMomentum& optimizer, const ForwardOptions& options) {
  Graph graph;
  const std::vector<Tensor> params = bind_parameters(graph, model);
  const ForwardResult fwd = forward(model, params, batch.inputs, options);
  const Tensor loss = softmax_cross_entropy(fwd.logits, batch.labels);
  const std::vector<Tensor> grads = backward(loss, params);
  std::vector<std::size_t> all(params.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  optimizer.step(model.mutable_parameters(), all, grads);
  return {loss.item()};
}

DropoutMasks dropout_masks(const MultimodalModel& model, std::size_t batch_size,
                           double p, std::mt19937_64& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout p must lie in [0, 1)");
  DropoutMasks masks;
  if (!training) return masks;
  const double kept_value = 1.0 / (1.0 - p);
  std::bernoulli_distribution keep(1.0 - p);
  auto draw = [&](std::size_t width) {
    std::vector<double> v(batch_size * width);
    for (double& x : v) x = keep(rng) ? kept_value : 0.0;
    return Tensor({batch_size, width}, std::move(v));
  };
  const ModelConfig& config = model.config();
  masks.encoder.resize(config.num_modalities());
  for (std::size_t m = 0; m < config.num_modalities(); ++m) {
    for (std::size_t width : config.encoder_hidden) {
      masks.encoder[m].push_back(draw(width));
    }
  }
  if (!config.classifier_hidden.empty()) {
    masks.fused = draw(config.classifier_hidden.front());
  }
  return masks;
}

double modality_drop_draw_probability(std::size_t num_modalities, double p) {
  if (num_modalities < 2) {
    throw InputError("modality dropout needs at least two modalities");
  }
  const double m = static_cast<double>(num_modalities);
  const double limit = (m - 1.0) / m;
  if (!(p >= 0.0 && p <= limit + 1e-12)) {
    throw ConfigError("modality drop probability " + std::to_string(p) +
                      " exceeds (M-1)/M = " + std::to_string(limit));
  }
  // Marginal drop rate of draw probability q after rescuing one modality from
  // an all-drop draw: q - q^M / M, increasing on [0, 1]. Bisect for p.
  auto marginal = [&](double q) { return q - std::pow(q, m) / m; };
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (marginal(mid) < p ? lo : hi) = mid;
  }
  return p >= limit ? 1.0 : hi;
}

std::vector<bool> modality_dropout_select(std::size_t num_modalities, double p,
                                          std::mt19937_64& rng) {
  const double q = modality_drop_draw_probability(num_modalities, p);
  std::bernoulli_distribution drop(q);
  std::vector<bool> kept(num_modalities);
  bool any = false;
  for (std::size_t m = 0; m < num_modalities; ++m) {
    kept[m] = !drop(rng);
    any = any || kept[m];
  }
  if (!any) {
    std::uniform_int_distribution<std::size_t> pick(0, num_modalities - 1);
    kept[pick(rng)] = true;
  }
  return kept;
}

AuxHeads init_aux_heads(const MultimodalModel& model, std::uint64_t seed) {
  const ModelConfig& config = model.config();
  std::mt19937_64 rng(seed);
  const std::size_t in = config.encoding_dim;
  const std::size_t out = config.num_classes;
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  AuxHeads heads;
  for (std::size_t m = 0; m < config.num_modalities(); ++m) {
    std::vector<double> w(in * out);
    for (double& v : w) v = dist(rng);
    heads.params.emplace_back(Shape{in, out}, std::move(w));
    heads.params.push_back(Tensor::zeros({out}));
  }
  return heads;
}

Tensor aux_logits(const Tensor& encoding, const Tensor& weight, const Tensor& bias) {
  return add(matmul(encoding, weight), expand(bias, 0, encoding.dim(0)));
}

Tensor teacher_logits(const MultimodalModel& teacher,
                      std::span<const Tensor> teacher_params, const Tensor& input) {
  const Tensor inputs[] = {input};
  return forward(teacher, teacher_params, inputs).logits.detach();
}

Tensor distillation_term(const Tensor& student_logits, const Tensor& teacher_logits,
                         double tau) {
  if (student_logits.shape() != teacher_logits.shape()) {
    throw DimensionError("distillation: student and teacher logits differ in shape");
  }
  const Tensor teacher_log_p = log_softmax(scale(teacher_logits.detach(), 1.0 / tau));
  const Tensor teacher_p = exp(teacher_log_p);
  const Tensor student_log_q = log_softmax(scale(student_logits, 1.0 / tau));
  const Tensor kl = sum(mul(teacher_p, sub(teacher_log_p, student_log_q)), 1);
  return scale(mean(kl), tau * tau);
}

Tensor umt_loss(const Tensor& logits, std::span<const std::size_t> labels,
                std::span<const Tensor> aux, std::span<const Tensor> teachers,
                double tau, double beta) {
  if (aux.size() != teachers.size()) {
    throw ConfigError("UMT needs one teacher per modality");
  }
  Tensor loss = softmax_cross_entropy(logits, labels);
  if (beta == 0.0) return loss;
  Tensor distill;
  for (std::size_t m = 0; m < aux.size(); ++m) {
    const Tensor term = distillation_term(aux[m], teachers[m], tau);
    distill = distill.defined() ? add(distill, term) : term;
  }
  return add(loss, scale(distill, beta));
}

std::vector<double> ogm_coefficients(std::span<const double> attribution,
                                     double alpha) {
  const double m = static_cast<double>(attribution.size());
  std::vector<double> k;
  k.reserve(attribution.size());
  for (double a : attribution) {
    const double rho = a * m;
    k.push_back(rho <= 1.0 ? 1.0 : 1.0 - std::tanh(alpha * (rho - 1.0)));
  }
  return k;
}

namespace {

void fit_naive(MultimodalModel& model, const Dataset& train, const FitConfig& fit) {
  SgdMomentum optimizer(fit.optimizer);
  for (std::size_t epoch = 0; epoch < fit.epochs; ++epoch) {
    for (const MultimodalBatch& batch :
         batches(train, fit.batch_size, fit.seed + epoch)) {
      naive_step(model, batch, optimizer);
    }
  }
}

class NaiveStrategy : public Strategy {
 public:
  StepReport step(MultimodalModel& model, const MultimodalBatch& batch,
                  SgdMomentum& optimizer) override {
    return naive_step(model, batch, optimizer);
  }
};

class DropoutStrategy : public Strategy {
 public:
  DropoutStrategy(double p, std::uint64_t seed) : p_(p), rng_(seed) {}

  StepReport step(MultimodalModel& model, const MultimodalBatch& batch,
                  SgdMomentum& optimizer) override {
    const DropoutMasks masks = dropout_masks(model, batch.size(), p_, rng_);
    ForwardOptions options;
    options.dropout = &masks;
    return naive_step(model, batch, optimizer, options);
  }

 private:
  double p_;
  std::mt19937_64 rng_;
};

class ModalityDropoutStrategy : public Strategy {
 public:
  ModalityDropoutStrategy(double p, std::uint64_t seed) : p_(p), rng_(seed) {}

  StepReport step(MultimodalModel& model, const MultimodalBatch& batch,
                  SgdMomentum& optimizer) override {
    ForwardOptions options;
    options.modality_kept =
        modality_dropout_select(model.num_modalities(), p_, rng_);
    return naive_step(model, batch, optimizer, options);
  }

 private:
  double p_;
  std::mt19937_64 rng_;
};

class UmtStrategy : public Strategy {
 public:
  UmtStrategy(const StrategyConfig& config, const MultimodalModel& model,
              const DatasetSplits& data, const FitConfig& fit)
      : tau_(config.umt_tau),
        beta_(config.umt_beta),
        heads_(init_aux_heads(model, config.seed ^ 0x5bd1e995ULL)),
        head_optimizer_(fit.optimizer) {
    for (std::size_t m = 0; m < model.num_modalities(); ++m) {
      teachers_.push_back(train_unimodal(model, data, m, fit).model);
    }
  }

  StepReport step(MultimodalModel& model, const MultimodalBatch& batch,
                  SgdMomentum& optimizer) override {
    Graph graph;
    const std::vector<Tensor> params = bind_parameters(graph, model);
    std::vector<Tensor> head_params;
    for (const Tensor& p : heads_.params) head_params.push_back(graph.variable(p));
    const ForwardResult fwd = forward(model, params, batch.inputs);
    std::vector<Tensor> aux;
    std::vector<Tensor> teacher;
    for (std::size_t m = 0; m < model.num_modalities(); ++m) {
      aux.push_back(aux_logits(fwd.encodings[m], head_params[2 * m],
                               head_params[2 * m + 1]));
      teacher.push_back(teacher_logits(teachers_[m], teachers_[m].parameters(),
                                       batch.inputs[m]));
    }
    const Tensor loss = umt_loss(fwd.logits, batch.labels, aux, teacher, tau_, beta_);

    std::vector<Tensor> wrt = params;
    wrt.insert(wrt.end(), head_params.begin(), head_params.end());
    std::vector<Tensor> grads = backward(loss, wrt);
    std::vector<Tensor> head_grads(grads.begin() + static_cast<std::ptrdiff_t>(params.size()),
                                   grads.end());
    grads.resize(params.size());

    std::vector<std::size_t> model_idx(params.size());
    for (std::size_t i = 0; i < model_idx.size(); ++i) model_idx[i] = i;
    optimizer.step(model.mutable_parameters(), model_idx, grads);
    std::vector<std::size_t> head_idx(heads_.params.size());
    for (std::size_t i = 0; i < head_idx.size(); ++i) head_idx[i] = i;
    head_optimizer_.step(heads_.params, head_idx, head_grads);
    return {loss.item()};
  }

 private:
  double tau_;
  double beta_;
  AuxHeads heads_;
  SgdMomentum head_optimizer_;
  std::vector<MultimodalModel> teachers_;
};

class OgmStrategy : public Strategy {
 public:
  explicit OgmStrategy(double alpha) : alpha_(alpha) {}

  StepReport step(MultimodalModel& model, const MultimodalBatch& batch,
                  SgdMomentum& optimizer) override {
    Graph graph;
    const std::vector<Tensor> params = bind_parameters(graph, model);
    const ForwardResult fwd = forward(model, params, batch.inputs);
    const Tensor loss = softmax_cross_entropy(fwd.logits, batch.labels);
    std::vector<Tensor> grads = backward(loss, params);

    const AttributionReport attr =
        attribution_report(fwd.logits, fwd.encodings, /*create_graph=*/false);
    const std::vector<double> a(attr.batch_mean.data().begin(),
                                attr.batch_mean.data().end());
    const std::vector<double> k = ogm_coefficients(a, alpha_);

    // Scale each modality's encoder gradients and its rows of the fusion
    // weight gradient.
    const auto& info = model.parameter_info();
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (info[i].modality) grads[i] = scale(grads[i].detach(), k[*info[i].modality]);
    }
    const std::size_t fusion = model.fusion_weight_index();
    Tensor fusion_grad = grads[fusion].detach();
    auto g = fusion_grad.mutable_data();
    const std::size_t cols = fusion_grad.dim(1);
    for (std::size_t m = 0; m < k.size(); ++m) {
      const auto [begin, end] = model.fusion_rows(m);
      for (std::size_t r = begin; r < end; ++r) {
        for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] *= k[m];
      }
    }
    grads[fusion] = fusion_grad;

    std::vector<std::size_t> all(params.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    optimizer.step(model.mutable_parameters(), all, grads);
    return {loss.item()};
  }

 private:
  double alpha_;
};

}  // namespace

UnimodalResult train_unimodal(const MultimodalModel& model,
                              const DatasetSplits& data, std::size_t modality,
                              const FitConfig& config) {
  UnimodalResult result{unimodal_view(model, modality), {}};
  fit_naive(result.model, data.train.select_modality(modality), config);
  result.metrics = evaluate(result.model, data.val.select_modality(modality));
  return result;
}

std::unique_ptr<Strategy> make_strategy(const StrategyConfig& config,
                                        const MultimodalModel& model,
                                        const DatasetSplits& data,
                                        const FitConfig& fit) {
  config.validate(config.kind == StrategyKind::kUnimodal
                      ? config.modality + 1
                      : model.num_modalities());
  switch (config.kind) {
    case StrategyKind::kNaive:
    case StrategyKind::kUnimodal:
      return std::make_unique<NaiveStrategy>();
    case StrategyKind::kDropout:
      return std::make_unique<DropoutStrategy>(config.dropout_p, config.seed);
    case StrategyKind::kModalityDropout:
      return std::make_unique<ModalityDropoutStrategy>(config.mdrop_p, config.seed);
    case StrategyKind::kUmt:
      return std::make_unique<UmtStrategy>(config, model, data, fit);
    case StrategyKind::kOgm:
      return std::make_unique<OgmStrategy>(config.ogm_alpha);
  }
  throw InternalError("unhandled strategy kind");
}

}  // namespace amrlab
