#pragma once

#include <string>
#include <vector>

#include "stgdat/tape.hpp"

namespace stgdat {
class Rng;
}

namespace stgdat::nn {

// Fully connected layer: out = act(x W + b). The struct stores parameter
// names; values live in the ParamStore attached to the tape.
struct DenseLayer {
  std::string w, b;
  Activation act = Activation::none;
  double slope = 0.2;

  static DenseLayer create(ParamStore& store, const std::string& prefix, int in,
                           int out, Activation act, Rng& rng, double slope = 0.2);
  Tape::Ref apply(Tape& tape, Tape::Ref x) const;
};

// Stack of dense layers; hidden layers share one activation, the output layer
// has its own (usually none).
struct Mlp {
  std::vector<DenseLayer> layers;

  static Mlp create(ParamStore& store, const std::string& prefix,
                    const std::vector<int>& dims, Activation hidden_act,
                    Activation out_act, Rng& rng, double slope = 0.2);
  Tape::Ref apply(Tape& tape, Tape::Ref x) const;
};

// Gated recurrent unit. With all parameters zero a step halves the hidden
// state: h' = (1 - sigmoid(0)) * tanh(0) + sigmoid(0) * h = 0.5 h.
struct GruCell {
  std::string prefix;
  int input_dim = 0, hidden_dim = 0;

  static GruCell create(ParamStore& store, const std::string& prefix,
                        int input_dim, int hidden_dim, Rng& rng);
  // hidden (B, H), input (B, I) -> (B, H); works for any batch size B.
  Tape::Ref step(Tape& tape, Tape::Ref hidden, Tape::Ref input) const;
  // Convenience non-tape evaluation (builds a scratch tape internally).
  Tensor step_values(ParamStore& store, const Tensor& hidden, const Tensor& input) const;
};

// 2-D convolution layer over NHWC tensors with zero padding.
struct Conv2dLayer {
  std::string k, b;
  int stride = 1, pad = 0;
  Activation act = Activation::none;
  double slope = 0.2;

  static Conv2dLayer create(ParamStore& store, const std::string& prefix, int kh,
                            int kw, int in_c, int out_c, int stride, int pad,
                            Activation act, Rng& rng, double slope = 0.2);
  Tape::Ref apply(Tape& tape, Tape::Ref x) const;
};

// Stateless single evaluations used by tests and by callers that do not need
// gradients. Both route through the same tape ops as training.
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                     Activation act, double slope = 0.2);
Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                      int stride, int pad);

}  // namespace stgdat::nn
