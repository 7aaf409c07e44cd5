#pragma once

#include <functional>
#include <map>
#include <string>

#include "stgdat/tape.hpp"

namespace stgdat {
class Rng;
}

namespace stgdat::nn {

// A loss builder records a forward pass on the given tape (reading parameters
// through tape.param) and returns the scalar loss node.
using LossBuilder = std::function<Tape::Ref(Tape&)>;

struct GradCheckConfig {
  double step = 1e-6;  // central-difference step; must be positive
  // Number of elements probed per parameter tensor; 0 probes all of them.
  // Probes are drawn without replacement using `seed`.
  int probes_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  // Worst relative error per parameter: |analytic - numeric| scaled by
  // max(1, |analytic|, |numeric|).
  std::map<std::string, double> per_param;
  double max_rel_err = 0.0;
  std::string worst_param;
  int probes = 0;
};

// Compares tape gradients of `build` against central finite differences,
// perturbing parameters in `store` in place (restored afterwards). Throws
// std::invalid_argument on a non-positive step and std::runtime_error if the
// loss evaluates non-finite.
GradCheckResult grad_check(const LossBuilder& build, ParamStore& store,
                           const GradCheckConfig& config);

}  // namespace stgdat::nn
