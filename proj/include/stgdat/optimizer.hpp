#pragma once

#include "stgdat/param_store.hpp"

namespace stgdat::nn {

struct OptimizerConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global-norm gradient clipping applied before the moment update;
  // non-positive disables it.
  double clip_norm = 0.0;
};

// Euclidean norm of all gradients in the store, taken jointly.
double global_grad_norm(const ParamStore& store);

// If the global gradient norm exceeds max_norm, scales every gradient by
// max_norm / norm. Returns the pre-clip norm.
double clip_gradients(ParamStore& store, double max_norm);

// One Adam update over every parameter (insertion order). Uses bias-corrected
// moments, increments the store's step counter and zeroes gradients
// afterwards. Throws std::runtime_error on non-finite gradients, naming the
// offending parameter.
void optimizer_step(ParamStore& store, const OptimizerConfig& config);

}  // namespace stgdat::nn
