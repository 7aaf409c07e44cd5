#pragma once

#include <array>
#include <string>
#include <vector>

#include "stgdat/data_io.hpp"
#include "stgdat/kinematics.hpp"
#include "stgdat/layers.hpp"
#include "stgdat/tape.hpp"

namespace stgdat {
class Rng;
}

namespace stgdat::model {

struct DecoderConfig {
  int summary_dim = 64;  // per-agent summary width from the graph encoder
  int latent_dim = 32;
  int hidden = 128;      // GRU hidden units
  kin::BicycleParams bicycle;

  int init_input_dim() const { return summary_dim + latent_dim; }
  void validate() const;
};

// Vehicle state held as five scalar tape nodes. Angles are left unwrapped on
// the tape so gradients stay continuous; wrapped numeric snapshots are
// recorded alongside.
struct TapeVehicleState {
  Tape::Ref x = -1, y = -1, psi = -1, v = -1, beta = -1;
};

struct RolloutStep {
  Tape::Ref position = -1;   // (1 x 2), anchor frame
  // Vehicle kinematic mode only: saturated control mean and the standard
  // deviations emitted by the uncertainty head (in raw control units).
  kin::ControlInput mu_u;
  double sigma_a = 0.0;
  double sigma_beta_dot = 0.0;
};

struct Rollout {
  bool kinematic = false;
  std::vector<RolloutStep> steps;         // future steps, oldest first
  // Kinematic mode: numeric state snapshots, initial state first
  // (steps.size() + 1 entries), with wrapped angles.
  std::vector<kin::VehicleState> states;
};

// Recurrent decoder. One GRU per agent type; the initial hidden state is a
// tanh projection of [summary || z]. The burn-in phase feeds the observed
// history positions, then the decoder feeds back its own output position.
// Vehicles in kinematic mode emit raw controls that are saturated and
// integrated through the bicycle model; everything else emits per-step
// displacements.
struct Decoder {
  DecoderConfig cfg;
  std::array<nn::DenseLayer, 3> init_hidden;        // indexed by AgentType
  std::array<nn::GruCell, 3> gru;                   // indexed by AgentType
  nn::DenseLayer control_head;                      // vehicles: (a, beta_dot, log sigmas)
  std::array<nn::DenseLayer, 3> displacement_head;  // (dx, dy)

  static Decoder create(ParamStore& store, const DecoderConfig& cfg, Rng& rng,
                        const std::string& prefix = "dec");

  // bound * tanh(raw / bound) applied to a (1 x 1) node.
  static Tape::Ref saturate_node(Tape& t, Tape::Ref raw, double bound);

  // Differentiable twin of kin::bicycle_step (no angle wrapping).
  static TapeVehicleState bicycle_step_node(Tape& t, const TapeVehicleState& s,
                                            Tape::Ref a, Tape::Ref beta_dot,
                                            const kin::BicycleParams& p);

  // history: the observed anchor-frame trajectory (at least one point, last
  // point is the current state). Returns future_steps positions in the same
  // frame. kinematic_vehicle selects the control/bicycle path for vehicles;
  // it is ignored for other types, which always decode displacements.
  Rollout decode_rollout(Tape& t, Tape::Ref summary, Tape::Ref z,
                         const std::vector<data::TrajPoint>& history,
                         data::AgentType type, int future_steps,
                         bool kinematic_vehicle) const;
};

struct FeasibilityReport {
  bool ok = true;
  int checked = 0;
  int violations = 0;
  double max_dv = 0.0;        // largest per-step |Δv|
  double max_dpsi_excess = 0.0;  // largest |Δψ| - (|v|/l_r)·dt, <= 0 when ok
};

// Audits consecutive states against the one-step reachability bounds
// |Δv| <= a_max·dt and |Δψ| <= (|v|/l_r)·dt (start-of-step speed), within
// tolerance.
FeasibilityReport audit_feasibility(const std::vector<kin::VehicleState>& states,
                                    const kin::BicycleParams& p, double tol = 1e-9);

}  // namespace stgdat::model
