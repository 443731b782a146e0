#include "amrlab/optim.hpp"

#include <cmath>

#include "amrlab/errors.hpp"

namespace amrlab {

namespace {

void check_step_args(const std::vector<Tensor>& params,
                     std::span<const std::size_t> indices,
                     std::span<const Tensor> grads) {
  if (indices.size() != grads.size()) {
    throw UsageError("optimizer: one gradient per parameter index required");
  }
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= params.size() ||
        params[indices[k]].shape() != grads[k].shape()) {
      throw DimensionError("optimizer: gradient does not match its parameter");
    }
  }
}

void require_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("parameter update diverged");
  }
}

}  // namespace

void SgdConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
}

SgdMomentum::SgdMomentum(SgdConfig config) : config_(config) { config_.validate(); }

void SgdMomentum::step(std::vector<Tensor>& params,
                       std::span<const std::size_t> indices,
                       std::span<const Tensor> grads) {
  check_step_args(params, indices, grads);
  if (velocity_.size() < params.size()) velocity_.resize(params.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    Tensor& v = velocity_[i];
    if (!v.defined()) v = Tensor::zeros(params[i].shape());
    auto vel = v.mutable_data();
    auto g = grads[k].data();
    auto p = params[i].mutable_data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      vel[j] = config_.momentum * vel[j] + g[j];
      p[j] -= config_.lr * vel[j];
    }
    require_finite(p);
  }
}

void sgd_step(std::vector<Tensor>& params, std::span<const std::size_t> indices,
              std::span<const Tensor> grads, double lr) {
  check_step_args(params, indices, grads);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    auto p = params[indices[k]].mutable_data();
    auto g = grads[k].data();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
    require_finite(p);
  }
}

}  // namespace amrlab
