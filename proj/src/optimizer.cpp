#include "stgdat/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace stgdat::nn {

double global_grad_norm(const ParamStore& store) {
  double sq = 0.0;
  for (const std::string& name : store.names()) {
    for (double g : store.at(name).grad.data) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_gradients(ParamStore& store, double max_norm) {
  const double norm = global_grad_norm(store);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const std::string& name : store.names()) {
      for (double& g : store.grad(name).data) g *= scale;
    }
  }
  return norm;
}

void optimizer_step(ParamStore& store, const OptimizerConfig& config) {
  for (const std::string& name : store.names()) {
    if (!store.at(name).grad.all_finite()) {
      throw std::runtime_error("optimizer_step: non-finite gradient in '" + name + "'");
    }
  }
  if (config.clip_norm > 0.0) clip_gradients(store, config.clip_norm);

  const std::uint64_t t = ++store.step_count;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));

  for (const std::string& name : store.names()) {
    Param& p = store.at(name);
    if (p.m.size() == 0) {
      p.m = Tensor::zeros(p.value.shape);
      p.v = Tensor::zeros(p.value.shape);
    }
    for (int i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.m[i] = config.beta1 * p.m[i] + (1.0 - config.beta1) * g;
      p.v[i] = config.beta2 * p.v[i] + (1.0 - config.beta2) * g * g;
      const double mhat = p.m[i] / bc1;
      const double vhat = p.v[i] / bc2;
      p.value[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
    }
  }
  store.zero_grads();
}

}  // namespace stgdat::nn
