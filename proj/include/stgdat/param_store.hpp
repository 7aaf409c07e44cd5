#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "stgdat/tensor.hpp"

namespace stgdat {

class Rng;

// One named trainable tensor with its gradient accumulator and Adam moments.
struct Param {
  Tensor value;
  Tensor grad;
  Tensor m;  // first moment,  sized on first optimizer step
  Tensor v;  // second moment, sized on first optimizer step
};

// Registry of all trainable parameters of a model. Iteration order is
// insertion order, which makes optimizer sweeps, serialization and gradient
// probing deterministic.
class ParamStore {
 public:
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  // Registers a new parameter; the gradient is allocated zero with the same
  // shape. Throws std::invalid_argument on duplicate names.
  Param& add(const std::string& name, Tensor init);

  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;

  Tensor& value(const std::string& name) { return at(name).value; }
  const Tensor& value(const std::string& name) const { return at(name).value; }
  Tensor& grad(const std::string& name) { return at(name).grad; }

  const std::vector<std::string>& names() const { return order_; }
  int index_of(const std::string& name) const;  // -1 if absent
  Param& at_index(int i) { return params_[static_cast<std::size_t>(i)]; }
  const Param& at_index(int i) const { return params_[static_cast<std::size_t>(i)]; }
  std::size_t count() const { return order_.size(); }
  std::size_t scalar_count() const;

  void zero_grads();

  // Adam timestep; incremented once per optimizer step.
  std::uint64_t step_count = 0;

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<Param> params_;
};

// Glorot / Xavier uniform initialization: U(+-sqrt(6 / (fan_in + fan_out))).
Tensor glorot_uniform(int fan_in, int fan_out, Rng& rng);

}  // namespace stgdat
