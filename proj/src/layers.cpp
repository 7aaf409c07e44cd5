#include "stgdat/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "stgdat/rng.hpp"

namespace stgdat::nn {

DenseLayer DenseLayer::create(ParamStore& store, const std::string& prefix, int in,
                              int out, Activation act, Rng& rng, double slope) {
  store.add(prefix + ".w", glorot_uniform(in, out, rng));
  store.add(prefix + ".b", Tensor::zeros({1, out}));
  DenseLayer layer;
  layer.w = prefix + ".w";
  layer.b = prefix + ".b";
  layer.act = act;
  layer.slope = slope;
  return layer;
}

Tape::Ref DenseLayer::apply(Tape& tape, Tape::Ref x) const {
  Tape::Ref y = tape.add_row(tape.matmul(x, tape.param(w)), tape.param(b));
  return tape.activation(y, act, slope);
}

Mlp Mlp::create(ParamStore& store, const std::string& prefix,
                const std::vector<int>& dims, Activation hidden_act,
                Activation out_act, Rng& rng, double slope) {
  if (dims.size() < 2) throw std::invalid_argument("Mlp: needs at least two dims");
  Mlp mlp;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = (i + 2 == dims.size());
    mlp.layers.push_back(DenseLayer::create(store, prefix + ".l" + std::to_string(i),
                                            dims[i], dims[i + 1],
                                            last ? out_act : hidden_act, rng, slope));
  }
  return mlp;
}

Tape::Ref Mlp::apply(Tape& tape, Tape::Ref x) const {
  for (const DenseLayer& l : layers) x = l.apply(tape, x);
  return x;
}

GruCell GruCell::create(ParamStore& store, const std::string& prefix, int input_dim,
                        int hidden_dim, Rng& rng) {
  GruCell cell;
  cell.prefix = prefix;
  cell.input_dim = input_dim;
  cell.hidden_dim = hidden_dim;
  for (const char* gate : {"z", "r", "n"}) {
    store.add(prefix + ".wx" + gate, glorot_uniform(input_dim, hidden_dim, rng));
    store.add(prefix + ".wh" + gate, glorot_uniform(hidden_dim, hidden_dim, rng));
    store.add(prefix + ".b" + std::string(gate), Tensor::zeros({1, hidden_dim}));
  }
  return cell;
}

Tape::Ref GruCell::step(Tape& tape, Tape::Ref hidden, Tape::Ref input) const {
  auto gate = [&](const char* g) {
    return tape.add_row(tape.add(tape.matmul(input, tape.param(prefix + ".wx" + g)),
                                 tape.matmul(hidden, tape.param(prefix + ".wh" + g))),
                        tape.param(prefix + ".b" + g));
  };
  Tape::Ref z = tape.activation(gate("z"), Activation::sigmoid);
  Tape::Ref r = tape.activation(gate("r"), Activation::sigmoid);
  Tape::Ref n_pre = tape.add_row(
      tape.add(tape.matmul(input, tape.param(prefix + ".wxn")),
               tape.mul(r, tape.matmul(hidden, tape.param(prefix + ".whn")))),
      tape.param(prefix + ".bn"));
  Tape::Ref n = tape.activation(n_pre, Activation::tanh);
  // h' = (1 - z) * n + z * h
  Tape::Ref one_minus_z = tape.affine(z, -1.0, 1.0);
  return tape.add(tape.mul(one_minus_z, n), tape.mul(z, hidden));
}

Tensor GruCell::step_values(ParamStore& store, const Tensor& hidden,
                            const Tensor& input) const {
  Tape tape(&store);
  return tape.value(step(tape, tape.constant(hidden), tape.constant(input)));
}

Conv2dLayer Conv2dLayer::create(ParamStore& store, const std::string& prefix, int kh,
                                int kw, int in_c, int out_c, int stride, int pad,
                                Activation act, Rng& rng, double slope) {
  const double bound = std::sqrt(6.0 / (kh * kw * in_c + kh * kw * out_c));
  store.add(prefix + ".k", Tensor::uniform({kh, kw, in_c, out_c}, -bound, bound, rng));
  store.add(prefix + ".b", Tensor::zeros({1, out_c}));
  Conv2dLayer layer;
  layer.k = prefix + ".k";
  layer.b = prefix + ".b";
  layer.stride = stride;
  layer.pad = pad;
  layer.act = act;
  layer.slope = slope;
  return layer;
}

Tape::Ref Conv2dLayer::apply(Tape& tape, Tape::Ref x) const {
  Tape::Ref y = tape.conv2d(x, tape.param(k), tape.param(b), stride, pad);
  return tape.activation(y, act, slope);
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                     Activation act, double slope) {
  Tape tape;
  Tape::Ref y = tape.add_row(tape.matmul(tape.constant(input), tape.constant(weights)),
                             tape.constant(bias));
  return tape.value(tape.activation(y, act, slope));
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                      int stride, int pad) {
  Tape tape;
  return tape.value(tape.conv2d(tape.constant(input), tape.constant(kernels),
                                tape.constant(bias), stride, pad));
}

}  // namespace stgdat::nn
