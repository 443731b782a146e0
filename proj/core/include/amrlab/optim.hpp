#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "amrlab/tensor.hpp"

namespace amrlab {

struct SgdConfig {
  double lr = 0.05;
  double momentum = 0.9;

  void validate() const;  // ConfigError
};

// Heavy-ball SGD: v = momentum * v + g, p -= lr * v. Velocity is kept per
// parameter index, so one optimizer serves one parameter list.
class SgdMomentum {
 public:
  explicit SgdMomentum(SgdConfig config);

  const SgdConfig& config() const { return config_; }

  // grads[k] is the gradient of params[indices[k]].
  void step(std::vector<Tensor>& params, std::span<const std::size_t> indices,
            std::span<const Tensor> grads);

 private:
  SgdConfig config_;
  std::vector<Tensor> velocity_;
};

// Stateless p -= lr * g on the listed parameters.
void sgd_step(std::vector<Tensor>& params, std::span<const std::size_t> indices,
              std::span<const Tensor> grads, double lr);

}  // namespace amrlab
