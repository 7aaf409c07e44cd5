#include "stgdat/param_store.hpp"

#include <cmath>
#include <stdexcept>

#include "stgdat/rng.hpp"

namespace stgdat {

Param& ParamStore::add(const std::string& name, Tensor init) {
  if (contains(name)) {
    throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  }
  index_[name] = params_.size();
  order_.push_back(name);
  Param p;
  p.grad = Tensor::zeros(init.shape);
  p.value = std::move(init);
  params_.push_back(std::move(p));
  return params_.back();
}

Param& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
  }
  return params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
  }
  return params_[it->second];
}

int ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : static_cast<int>(it->second);
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Param& p : params_) n += p.value.data.size();
  return n;
}

void ParamStore::zero_grads() {
  for (Param& p : params_) {
    std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
  }
}

Tensor glorot_uniform(int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::uniform({fan_in, fan_out}, -bound, bound, rng);
}

}  // namespace stgdat
