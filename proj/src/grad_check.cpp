#include "stgdat/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "stgdat/rng.hpp"

namespace stgdat::nn {

namespace {

double eval_loss(const LossBuilder& build, ParamStore& store) {
  Tape tape(&store);
  const double loss = tape.scalar_value(build(tape));
  if (!std::isfinite(loss)) {
    throw std::runtime_error("grad_check: loss is not finite");
  }
  return loss;
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& build, ParamStore& store,
                           const GradCheckConfig& config) {
  if (!(config.step > 0.0)) {
    throw std::invalid_argument("grad_check: step must be positive");
  }

  // Analytic pass.
  store.zero_grads();
  {
    Tape tape(&store);
    Tape::Ref loss = build(tape);
    if (!std::isfinite(tape.scalar_value(loss))) {
      throw std::runtime_error("grad_check: loss is not finite");
    }
    tape.backward(loss);
  }

  Rng rng(config.seed);
  GradCheckResult result;
  for (const std::string& name : store.names()) {
    Param& p = store.at(name);
    const int n = p.value.size();
    if (n == 0) continue;

    std::vector<int> probe_idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) probe_idx[static_cast<std::size_t>(i)] = i;
    if (config.probes_per_param > 0 && config.probes_per_param < n) {
      // Partial Fisher-Yates: the first `probes_per_param` entries become a
      // uniform sample without replacement.
      for (int i = 0; i < config.probes_per_param; ++i) {
        std::swap(probe_idx[static_cast<std::size_t>(i)],
                  probe_idx[static_cast<std::size_t>(rng.uniform_int(i, n - 1))]);
      }
      probe_idx.resize(static_cast<std::size_t>(config.probes_per_param));
    }

    double worst = 0.0;
    for (int i : probe_idx) {
      const double saved = p.value[i];
      p.value[i] = saved + config.step;
      const double up = eval_loss(build, store);
      p.value[i] = saved - config.step;
      const double down = eval_loss(build, store);
      p.value[i] = saved;

      const double numeric = (up - down) / (2.0 * config.step);
      const double analytic = p.grad[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
      worst = std::max(worst, rel);
      ++result.probes;
    }
    result.per_param[name] = worst;
    if (worst >= result.max_rel_err) {
      result.max_rel_err = worst;
      result.worst_param = name;
    }
  }
  store.zero_grads();
  return result;
}

}  // namespace stgdat::nn
