#pragma once

#include <deque>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stgdat/param_store.hpp"
#include "stgdat/tensor.hpp"

namespace stgdat {

enum class Activation { none, leaky_relu, tanh, sigmoid };

// Reverse-mode automatic differentiation over tensor operations. A Tape
// records the forward computation as a flat list of nodes; backward() sweeps
// the list in reverse creation order and accumulates gradients, depositing
// parameter gradients into the attached ParamStore.
//
// Tapes are cheap, single-use objects: build one per forward pass, call
// backward, discard. Node handles (Ref) are plain indices into the tape.
class Tape {
 public:
  using Ref = int;

  explicit Tape(ParamStore* store = nullptr) : store_(store) {}

  ParamStore& store();

  // ---- leaves ----
  Ref constant(Tensor v);
  Ref scalar(double v) { return constant(Tensor::scalar(v)); }
  Ref param(const std::string& name);  // requires an attached store

  // ---- binary / elementwise ----
  Ref matmul(Ref a, Ref b);
  Ref add(Ref a, Ref b);        // same shape
  Ref sub(Ref a, Ref b);        // same shape
  Ref mul(Ref a, Ref b);        // elementwise, same shape
  Ref add_row(Ref mat, Ref row);  // broadcast a 1 x n row over matrix rows
  Ref affine(Ref a, double scale, double offset);  // scale * a + offset
  Ref add_n(std::vector<Ref> terms);               // same shape
  Ref mul_scalar(Ref s, Ref t);  // s is 1 x 1; value = s * t elementwise

  // ---- unary nonlinearities ----
  Ref activation(Ref a, Activation act, double leaky_slope = 0.2);
  Ref sin(Ref a);
  Ref cos(Ref a);
  Ref exp(Ref a);
  Ref softplus(Ref a);  // log(1 + e^x), overflow-safe

  // ---- shape manipulation ----
  Ref softmax_row(Ref a);                   // 1 x n, max-shifted for stability
  Ref concat_cols(std::vector<Ref> parts);  // equal row counts
  Ref stack_rows(std::vector<Ref> rows);    // each 1 x d
  Ref rows(Ref a, std::vector<int> idx);    // gather rows
  Ref slice_cols(Ref a, int begin, int len);
  Ref reshape(Ref a, std::vector<int> shape);  // same element count and order

  // ---- reductions ----
  Ref sum_all(Ref a);   // 1 x 1
  Ref mean_all(Ref a);  // 1 x 1
  Ref sq_norm(Ref a);   // 1 x 1, sum of squares
  Ref sq_dist(Ref a, Ref b);  // 1 x 1, sum of squared differences

  // ---- structured ops ----
  // input (B, H, W, C), kernel (KH, KW, C, OC), bias (1, OC); zero padding.
  Ref conv2d(Ref input, Ref kernel, Ref bias, int stride, int pad);
  // Biased V-statistic MMD^2 between rows of z and the constant sample
  // `prior`, with RBF kernel of bandwidth sigma. Differentiable in z only.
  Ref mmd_biased(Ref z, Tensor prior, double sigma);

  // ---- inspection ----
  // References remain valid while the tape lives (nodes are deque-backed).
  const Tensor& value(Ref r) const;
  double scalar_value(Ref r) const;
  // Gradient of the last backward() with respect to node r (zeros if the node
  // was not reached).
  const Tensor& grad(Ref r) const;
  std::size_t node_count() const { return nodes_.size(); }

  // ---- reverse sweep ----
  // Seeds d(loss)/d(loss) = 1 on a scalar node and accumulates parameter
  // gradients into the store (adding to whatever is already there).
  void backward(Ref loss);
  // General form: multiple seed nodes with explicit seed gradients.
  void backward(const std::vector<std::pair<Ref, Tensor>>& seeds);

 private:
  enum class Op {
    kConstant, kParam, kMatMul, kAdd, kSub, kMul, kAddRow, kAffine, kAddN,
    kMulScalar, kAct, kSin, kCos, kExp, kSoftplus, kSoftmaxRow, kConcatCols,
    kStackRows, kRows, kSliceCols, kReshape, kSumAll, kMeanAll, kSqNorm,
    kSqDist, kConv2d, kMmd,
  };

  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;  // input refs
    int i0 = 0, i1 = 0;          // small integer attributes (stride, begin, ...)
    double c0 = 0.0, c1 = 0.0;   // small scalar attributes (scale, sigma, ...)
    std::vector<int> aux;        // variadic input refs or gather indices
    int param = -1;              // index into store for kParam
    bool needs_grad = false;
    Tensor value;
    Tensor grad;
    bool grad_set = false;
    std::shared_ptr<Tensor> payload;  // op-specific cache (conv im2col, mmd prior)
  };

  Ref push(Node n);
  Node& node(Ref r);
  const Node& node(Ref r) const;
  void check_ref(Ref r, const char* who) const;
  Tensor& ensure_grad(Ref r);
  void accumulate(Ref r, const Tensor& g);
  void backprop_node(int i);

  ParamStore* store_;
  std::deque<Node> nodes_;  // deque: node references survive graph growth
  std::unordered_map<int, Ref> param_nodes_;  // one leaf per parameter per tape
  Tensor zero_scalar_ = Tensor::scalar(0.0);
};

}  // namespace stgdat
