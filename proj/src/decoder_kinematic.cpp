#include "stgdat/decoder_kinematic.hpp"

#include <cmath>
#include <stdexcept>

#include "stgdat/rng.hpp"

namespace stgdat::model {

namespace {

int type_index(data::AgentType t) { return static_cast<int>(t); }

const char* type_tag(int i) {
  switch (i) {
    case 0: return "vehicle";
    case 1: return "pedestrian";
    default: return "cyclist";
  }
}

}  // namespace

void DecoderConfig::validate() const {
  if (summary_dim <= 0 || latent_dim <= 0 || hidden <= 0) {
    throw std::invalid_argument("DecoderConfig: dimensions must be positive");
  }
  bicycle.validate();
}

Decoder Decoder::create(ParamStore& store, const DecoderConfig& cfg, Rng& rng,
                        const std::string& prefix) {
  cfg.validate();
  Decoder d;
  d.cfg = cfg;
  for (int i = 0; i < 3; ++i) {
    const std::string base = prefix + "." + type_tag(i);
    d.init_hidden[static_cast<std::size_t>(i)] =
        nn::DenseLayer::create(store, base + ".init", cfg.init_input_dim(),
                               cfg.hidden, Activation::tanh, rng);
    d.gru[static_cast<std::size_t>(i)] =
        nn::GruCell::create(store, base + ".gru", 2, cfg.hidden, rng);
    d.displacement_head[static_cast<std::size_t>(i)] = nn::DenseLayer::create(
        store, base + ".disp", cfg.hidden, 2, Activation::none, rng);
  }
  d.control_head = nn::DenseLayer::create(store, prefix + ".vehicle.ctrl",
                                          cfg.hidden, 4, Activation::none, rng);
  return d;
}

Tape::Ref Decoder::saturate_node(Tape& t, Tape::Ref raw, double bound) {
  if (!(bound > 0.0)) throw std::invalid_argument("saturate_node: bound must be positive");
  return t.affine(t.activation(t.affine(raw, 1.0 / bound, 0.0), Activation::tanh),
                  bound, 0.0);
}

TapeVehicleState Decoder::bicycle_step_node(Tape& t, const TapeVehicleState& s,
                                            Tape::Ref a, Tape::Ref beta_dot,
                                            const kin::BicycleParams& p) {
  const Tape::Ref course = t.add(s.psi, s.beta);
  TapeVehicleState n;
  n.x = t.add(s.x, t.affine(t.mul(s.v, t.cos(course)), p.dt, 0.0));
  n.y = t.add(s.y, t.affine(t.mul(s.v, t.sin(course)), p.dt, 0.0));
  n.psi = t.add(s.psi, t.affine(t.mul(s.v, t.sin(s.beta)), p.dt / p.l_r, 0.0));
  n.v = t.add(s.v, t.affine(a, p.dt, 0.0));
  n.beta = t.add(s.beta, t.affine(beta_dot, p.dt, 0.0));
  return n;
}

Rollout Decoder::decode_rollout(Tape& t, Tape::Ref summary, Tape::Ref z,
                                const std::vector<data::TrajPoint>& history,
                                data::AgentType type, int future_steps,
                                bool kinematic_vehicle) const {
  if (history.empty()) throw std::invalid_argument("decode_rollout: empty history");
  if (future_steps < 1) throw std::invalid_argument("decode_rollout: need future_steps >= 1");
  const Tensor& sv = t.value(summary);
  const Tensor& zv = t.value(z);
  if (sv.rows() != 1 || sv.cols() != cfg.summary_dim || zv.rows() != 1 ||
      zv.cols() != cfg.latent_dim) {
    throw std::invalid_argument("decode_rollout: summary or latent shape mismatch");
  }
  const int ti = type_index(type);
  if (ti < 0 || ti > 2) throw std::invalid_argument("decode_rollout: unknown agent type");
  const auto idx = static_cast<std::size_t>(ti);

  Tape::Ref h = init_hidden[idx].apply(t, t.concat_cols({summary, z}));

  // Burn-in: feed the observed positions through the recurrence.
  for (const data::TrajPoint& p : history) {
    h = gru[idx].step(t, h, t.constant(Tensor::row({p.x, p.y})));
  }

  Rollout out;
  out.kinematic = kinematic_vehicle && type == data::AgentType::vehicle;
  const data::TrajPoint& last = history.back();

  if (out.kinematic) {
    TapeVehicleState s;
    s.x = t.scalar(last.x);
    s.y = t.scalar(last.y);
    s.psi = t.scalar(last.psi);
    s.v = t.scalar(last.v);
    s.beta = t.scalar(0.0);  // slip angle unobserved; start aligned
    kin::VehicleState snap{last.x, last.y, last.psi, last.v, 0.0};
    out.states.push_back(snap);
    Tape::Ref prev_pos = t.constant(Tensor::row({last.x, last.y}));
    for (int k = 0; k < future_steps; ++k) {
      h = gru[idx].step(t, h, prev_pos);
      const Tape::Ref head = control_head.apply(t, h);
      const Tape::Ref a = saturate_node(t, t.slice_cols(head, 0, 1), cfg.bicycle.a_max);
      const Tape::Ref bd =
          saturate_node(t, t.slice_cols(head, 1, 1), cfg.bicycle.beta_dot_max);
      s = bicycle_step_node(t, s, a, bd, cfg.bicycle);

      RolloutStep step;
      step.position = t.concat_cols({s.x, s.y});
      step.mu_u = {t.scalar_value(a), t.scalar_value(bd)};
      step.sigma_a = std::exp(t.value(head)[2]);
      step.sigma_beta_dot = std::exp(t.value(head)[3]);
      out.steps.push_back(step);

      snap.x = t.scalar_value(s.x);
      snap.y = t.scalar_value(s.y);
      snap.psi = wrap_angle(t.scalar_value(s.psi));
      snap.v = t.scalar_value(s.v);
      snap.beta = wrap_angle(t.scalar_value(s.beta));
      out.states.push_back(snap);
      prev_pos = step.position;
    }
  } else {
    Tape::Ref prev_pos = t.constant(Tensor::row({last.x, last.y}));
    for (int k = 0; k < future_steps; ++k) {
      h = gru[idx].step(t, h, prev_pos);
      const Tape::Ref d = displacement_head[idx].apply(t, h);
      RolloutStep step;
      step.position = t.add(prev_pos, d);
      out.steps.push_back(step);
      prev_pos = step.position;
    }
  }
  return out;
}

FeasibilityReport audit_feasibility(const std::vector<kin::VehicleState>& states,
                                    const kin::BicycleParams& p, double tol) {
  p.validate();
  FeasibilityReport r;
  for (std::size_t i = 1; i < states.size(); ++i) {
    const kin::VehicleState& prev = states[i - 1];
    const kin::VehicleState& cur = states[i];
    ++r.checked;
    const double dv = std::abs(cur.v - prev.v);
    const double dpsi = std::abs(wrap_angle(cur.psi - prev.psi));
    const double dpsi_bound = std::abs(prev.v) / p.l_r * p.dt;
    r.max_dv = std::max(r.max_dv, dv);
    r.max_dpsi_excess = std::max(r.max_dpsi_excess, dpsi - dpsi_bound);
    if (dv > p.a_max * p.dt + tol || dpsi > dpsi_bound + tol) {
      ++r.violations;
      r.ok = false;
    }
  }
  return r;
}

}  // namespace stgdat::model
