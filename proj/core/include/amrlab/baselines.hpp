#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "amrlab/data.hpp"
#include "amrlab/metrics.hpp"
#include "amrlab/model.hpp"
#include "amrlab/optim.hpp"
#include "amrlab/tensor.hpp"

namespace amrlab {

enum class StrategyKind {
  kNaive,
  kUnimodal,
  kDropout,
  kModalityDropout,
  kUmt,
  kOgm,  // simplified: attribution-driven coefficients, no GE noise
};

struct StrategyConfig {
  StrategyKind kind = StrategyKind::kNaive;
  std::size_t modality = 0;  // unimodal
  double dropout_p = 0.5;
  double mdrop_p = 0.5;
  double umt_tau = 2.0;
  double umt_beta = 1.0;
  double ogm_alpha = 1.0;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate(std::size_t num_modalities) const;
  // Short method name used in reports, e.g. "naive", "ogm_simplified".
  std::string label() const;
};

StrategyKind parse_strategy_kind(const std::string& name);

struct StepReport {
  double task_loss = 0.0;
};

// One cross-entropy update over every parameter.
StepReport naive_step(MultimodalModel& model, const MultimodalBatch& batch,
                      SgdMomentum& optimizer, const ForwardOptions& options = {});

// Masks for encoder hidden activations and the fused representation, with
// kept units scaled by 1/(1-p). In evaluation mode no mask is produced.
// Throws ConfigError for p outside [0, 1).
DropoutMasks dropout_masks(const MultimodalModel& model, std::size_t batch_size,
                           double p, std::mt19937_64& rng, bool training = true);

// Per-modality drop probability used inside the independent draws so that,
// after the never-empty repair, each modality is dropped with marginal
// probability p. Requires p <= (M-1)/M.
double modality_drop_draw_probability(std::size_t num_modalities, double p);

// Kept-modality flags; never all false. Throws InputError for M < 2 and
// ConfigError when p exceeds (M-1)/M.
std::vector<bool> modality_dropout_select(std::size_t num_modalities, double p,
                                          std::mt19937_64& rng);

// Per-modality linear heads on the encodings used as distillation students.
struct AuxHeads {
  std::vector<Tensor> params;  // weight [enc x C], bias [C] per modality
};
AuxHeads init_aux_heads(const MultimodalModel& model, std::uint64_t seed);
Tensor aux_logits(const Tensor& encoding, const Tensor& weight, const Tensor& bias);

// Teacher logits for one modality, cut from any graph.
Tensor teacher_logits(const MultimodalModel& teacher,
                      std::span<const Tensor> teacher_params, const Tensor& input);

// tau^2 * mean_batch KL(softmax(teacher/tau) || softmax(student/tau)).
Tensor distillation_term(const Tensor& student_logits, const Tensor& teacher_logits,
                         double tau);

// Task cross-entropy + beta * sum_m distillation_term(aux_m, teacher_m).
Tensor umt_loss(const Tensor& logits, std::span<const std::size_t> labels,
                std::span<const Tensor> aux, std::span<const Tensor> teachers,
                double tau, double beta);

// k^m = 1 when a^m * M <= 1, else 1 - tanh(alpha * (a^m * M - 1)).
std::vector<double> ogm_coefficients(std::span<const double> attribution,
                                     double alpha);

struct FitConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  SgdConfig optimizer;
  std::uint64_t seed = 0;
};

struct UnimodalResult {
  MultimodalModel model;
  MetricsReport metrics;  // on the validation split
};

// Trains unimodal_view(model, m) on modality m alone with naive steps.
UnimodalResult train_unimodal(const MultimodalModel& model,
                              const DatasetSplits& data, std::size_t modality,
                              const FitConfig& config);

// A training-step policy. Strategies own their RNG and auxiliary state;
// the task optimizer is shared with the caller.
class Strategy {
 public:
  virtual ~Strategy() = default;
  virtual StepReport step(MultimodalModel& model, const MultimodalBatch& batch,
                          SgdMomentum& optimizer) = 0;
};

// Unimodal runs are naive steps on a model and dataset the caller has
// already reduced to one modality. UMT pretrains its teachers here.
std::unique_ptr<Strategy> make_strategy(const StrategyConfig& config,
                                        const MultimodalModel& model,
                                        const DatasetSplits& data,
                                        const FitConfig& fit);

}  // namespace amrlab
