#include "stgdat/tape.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace stgdat {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<RowMat>;
using CMap = Eigen::Map<const RowMat>;

CMap as_mat(const Tensor& t) { return CMap(t.data.data(), t.rows(), t.cols()); }
Map as_mat(Tensor& t) { return Map(t.data.data(), t.rows(), t.cols()); }

CMap as_mat(const Tensor& t, int r, int c) { return CMap(t.data.data(), r, c); }
Map as_mat(Tensor& t, int r, int c) { return Map(t.data.data(), r, c); }

[[noreturn]] void shape_error(const char* who, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(who) + ": incompatible shapes " +
                              a.shape_str() + " and " + b.shape_str());
}

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

ParamStore& Tape::store() {
  if (!store_) throw std::logic_error("Tape: no parameter store attached");
  return *store_;
}

Tape::Ref Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<Ref>(nodes_.size() - 1);
}

Tape::Node& Tape::node(Ref r) { return nodes_[static_cast<std::size_t>(r)]; }
const Tape::Node& Tape::node(Ref r) const { return nodes_[static_cast<std::size_t>(r)]; }

void Tape::check_ref(Ref r, const char* who) const {
  if (r < 0 || r >= static_cast<Ref>(nodes_.size())) {
    throw std::invalid_argument(std::string(who) + ": invalid node handle " +
                                std::to_string(r));
  }
}

const Tensor& Tape::value(Ref r) const {
  check_ref(r, "Tape::value");
  return node(r).value;
}

double Tape::scalar_value(Ref r) const {
  const Tensor& v = value(r);
  if (v.size() != 1) {
    throw std::invalid_argument("Tape::scalar_value: node is not scalar, shape " +
                                v.shape_str());
  }
  return v.data[0];
}

const Tensor& Tape::grad(Ref r) const {
  check_ref(r, "Tape::grad");
  const Node& n = node(r);
  return n.grad_set ? n.grad : zero_scalar_;
}

Tape::Ref Tape::constant(Tensor v) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(v);
  return push(std::move(n));
}

Tape::Ref Tape::param(const std::string& name) {
  ParamStore& s = store();
  const int idx = s.index_of(name);
  if (idx < 0) throw std::invalid_argument("Tape::param: unknown parameter '" + name + "'");
  auto it = param_nodes_.find(idx);
  if (it != param_nodes_.end()) return it->second;
  Node n;
  n.op = Op::kParam;
  n.param = idx;
  n.value = s.at_index(idx).value;
  n.needs_grad = true;
  const Ref r = push(std::move(n));
  param_nodes_[idx] = r;
  return r;
}

Tape::Ref Tape::matmul(Ref a, Ref b) {
  check_ref(a, "matmul");
  check_ref(b, "matmul");
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  if (va.cols() != vb.rows()) shape_error("matmul", va, vb);
  Node n;
  n.op = Op::kMatMul;
  n.a = a;
  n.b = b;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.value = Tensor({va.rows(), vb.cols()});
  as_mat(n.value) = as_mat(va) * as_mat(vb);
  return push(std::move(n));
}

Tape::Ref Tape::add(Ref a, Ref b) {
  check_ref(a, "add");
  check_ref(b, "add");
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  if (!va.same_shape(vb)) shape_error("add", va, vb);
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.value = va;
  for (int i = 0; i < n.value.size(); ++i) n.value[i] += vb[i];
  return push(std::move(n));
}

Tape::Ref Tape::sub(Ref a, Ref b) {
  check_ref(a, "sub");
  check_ref(b, "sub");
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  if (!va.same_shape(vb)) shape_error("sub", va, vb);
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.value = va;
  for (int i = 0; i < n.value.size(); ++i) n.value[i] -= vb[i];
  return push(std::move(n));
}

Tape::Ref Tape::mul(Ref a, Ref b) {
  check_ref(a, "mul");
  check_ref(b, "mul");
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  if (!va.same_shape(vb)) shape_error("mul", va, vb);
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.value = va;
  for (int i = 0; i < n.value.size(); ++i) n.value[i] *= vb[i];
  return push(std::move(n));
}

Tape::Ref Tape::add_row(Ref mat, Ref row) {
  check_ref(mat, "add_row");
  check_ref(row, "add_row");
  const Tensor& vm = node(mat).value;
  const Tensor& vr = node(row).value;
  if (vr.rows() != 1 || vr.cols() != vm.cols()) shape_error("add_row", vm, vr);
  Node n;
  n.op = Op::kAddRow;
  n.a = mat;
  n.b = row;
  n.needs_grad = node(mat).needs_grad || node(row).needs_grad;
  n.value = vm;
  as_mat(n.value).rowwise() += as_mat(vr).row(0);
  return push(std::move(n));
}

Tape::Ref Tape::affine(Ref a, double scale, double offset) {
  check_ref(a, "affine");
  Node n;
  n.op = Op::kAffine;
  n.a = a;
  n.c0 = scale;
  n.c1 = offset;
  n.needs_grad = node(a).needs_grad;
  n.value = node(a).value;
  for (double& v : n.value.data) v = scale * v + offset;
  return push(std::move(n));
}

Tape::Ref Tape::add_n(std::vector<Ref> terms) {
  if (terms.empty()) throw std::invalid_argument("add_n: empty term list");
  for (Ref r : terms) check_ref(r, "add_n");
  Node n;
  n.op = Op::kAddN;
  n.value = node(terms[0]).value;
  for (std::size_t i = 1; i < terms.size(); ++i) {
    const Tensor& v = node(terms[i]).value;
    if (!v.same_shape(n.value)) shape_error("add_n", n.value, v);
    for (int j = 0; j < n.value.size(); ++j) n.value[j] += v[j];
  }
  for (Ref r : terms) n.needs_grad = n.needs_grad || node(r).needs_grad;
  n.aux.assign(terms.begin(), terms.end());
  return push(std::move(n));
}

Tape::Ref Tape::mul_scalar(Ref s, Ref t) {
  check_ref(s, "mul_scalar");
  check_ref(t, "mul_scalar");
  const Tensor& vs = node(s).value;
  if (vs.size() != 1) {
    throw std::invalid_argument("mul_scalar: first operand must be 1 x 1, got " +
                                vs.shape_str());
  }
  Node n;
  n.op = Op::kMulScalar;
  n.a = s;
  n.b = t;
  n.needs_grad = node(s).needs_grad || node(t).needs_grad;
  n.value = node(t).value;
  for (double& v : n.value.data) v *= vs.data[0];
  return push(std::move(n));
}

Tape::Ref Tape::activation(Ref a, Activation act, double leaky_slope) {
  check_ref(a, "activation");
  if (act == Activation::none) return a;
  Node n;
  n.op = Op::kAct;
  n.a = a;
  n.i0 = static_cast<int>(act);
  n.c0 = leaky_slope;
  n.needs_grad = node(a).needs_grad;
  n.value = node(a).value;
  switch (act) {
    case Activation::leaky_relu:
      for (double& v : n.value.data) v = v >= 0.0 ? v : leaky_slope * v;
      break;
    case Activation::tanh:
      for (double& v : n.value.data) v = std::tanh(v);
      break;
    case Activation::sigmoid:
      for (double& v : n.value.data) v = sigmoid(v);
      break;
    case Activation::none:
      break;
  }
  return push(std::move(n));
}

Tape::Ref Tape::sin(Ref a) {
  check_ref(a, "sin");
  Node n;
  n.op = Op::kSin;
  n.a = a;
  n.needs_grad = node(a).needs_grad;
  n.value = node(a).value;
  for (double& v : n.value.data) v = std::sin(v);
  return push(std::move(n));
}

Tape::Ref Tape::cos(Ref a) {
  check_ref(a, "cos");
  Node n;
  n.op = Op::kCos;
  n.a = a;
  n.needs_grad = node(a).needs_grad;
  n.value = node(a).value;
  for (double& v : n.value.data) v = std::cos(v);
  return push(std::move(n));
}

Tape::Ref Tape::exp(Ref a) {
  check_ref(a, "exp");
  Node n;
  n.op = Op::kExp;
  n.a = a;
  n.needs_grad = node(a).needs_grad;
  n.value = node(a).value;
  for (double& v : n.value.data) v = std::exp(v);
  return push(std::move(n));
}

Tape::Ref Tape::softplus(Ref a) {
  check_ref(a, "softplus");
  Node n;
  n.op = Op::kSoftplus;
  n.a = a;
  n.needs_grad = node(a).needs_grad;
  n.value = node(a).value;
  for (double& v : n.value.data) {
    v = v > 30.0 ? v : std::log1p(std::exp(v));
  }
  return push(std::move(n));
}

Tape::Ref Tape::softmax_row(Ref a) {
  check_ref(a, "softmax_row");
  const Tensor& va = node(a).value;
  if (va.rows() != 1 || va.size() == 0) {
    throw std::invalid_argument("softmax_row: expects a non-empty 1 x n row, got " +
                                va.shape_str());
  }
  Node n;
  n.op = Op::kSoftmaxRow;
  n.a = a;
  n.needs_grad = node(a).needs_grad;
  n.value = va;
  double mx = n.value.data[0];
  for (double v : n.value.data) mx = std::max(mx, v);
  double sum = 0.0;
  for (double& v : n.value.data) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : n.value.data) v /= sum;
  return push(std::move(n));
}

Tape::Ref Tape::concat_cols(std::vector<Ref> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty part list");
  for (Ref r : parts) check_ref(r, "concat_cols");
  const int rows = node(parts[0]).value.rows();
  int total_cols = 0;
  for (Ref r : parts) {
    const Tensor& v = node(r).value;
    if (v.rows() != rows) shape_error("concat_cols", node(parts[0]).value, v);
    total_cols += v.cols();
  }
  Node n;
  n.op = Op::kConcatCols;
  n.value = Tensor({rows, total_cols});
  int at = 0;
  for (Ref r : parts) {
    const Tensor& v = node(r).value;
    as_mat(n.value).middleCols(at, v.cols()) = as_mat(v);
    at += v.cols();
    n.needs_grad = n.needs_grad || node(r).needs_grad;
  }
  n.aux.assign(parts.begin(), parts.end());
  return push(std::move(n));
}

Tape::Ref Tape::stack_rows(std::vector<Ref> rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty row list");
  for (Ref r : rows) check_ref(r, "stack_rows");
  const int cols = node(rows[0]).value.cols();
  Node n;
  n.op = Op::kStackRows;
  n.value = Tensor({static_cast<int>(rows.size()), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& v = node(rows[i]).value;
    if (v.rows() != 1 || v.cols() != cols) shape_error("stack_rows", node(rows[0]).value, v);
    as_mat(n.value).row(static_cast<int>(i)) = as_mat(v).row(0);
    n.needs_grad = n.needs_grad || node(rows[i]).needs_grad;
  }
  n.aux.assign(rows.begin(), rows.end());
  return push(std::move(n));
}

Tape::Ref Tape::rows(Ref a, std::vector<int> idx) {
  check_ref(a, "rows");
  const Tensor& va = node(a).value;
  if (idx.empty()) throw std::invalid_argument("rows: empty index list");
  for (int i : idx) {
    if (i < 0 || i >= va.rows()) {
      throw std::invalid_argument("rows: index " + std::to_string(i) +
                                  " out of range for " + va.shape_str());
    }
  }
  Node n;
  n.op = Op::kRows;
  n.a = a;
  n.needs_grad = node(a).needs_grad;
  n.value = Tensor({static_cast<int>(idx.size()), va.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    as_mat(n.value).row(static_cast<int>(i)) = as_mat(va).row(idx[i]);
  }
  n.aux = std::move(idx);
  return push(std::move(n));
}

Tape::Ref Tape::slice_cols(Ref a, int begin, int len) {
  check_ref(a, "slice_cols");
  const Tensor& va = node(a).value;
  if (begin < 0 || len <= 0 || begin + len > va.cols()) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + len) + ") out of " + va.shape_str());
  }
  Node n;
  n.op = Op::kSliceCols;
  n.a = a;
  n.i0 = begin;
  n.i1 = len;
  n.needs_grad = node(a).needs_grad;
  n.value = Tensor({va.rows(), len});
  as_mat(n.value) = as_mat(va).middleCols(begin, len);
  return push(std::move(n));
}

Tape::Ref Tape::reshape(Ref a, std::vector<int> shape) {
  check_ref(a, "reshape");
  const Tensor& va = node(a).value;
  Tensor out(shape);
  if (out.size() != va.size()) {
    throw std::invalid_argument("reshape: element count mismatch, " + va.shape_str() +
                                " to " + out.shape_str());
  }
  out.data = va.data;
  Node n;
  n.op = Op::kReshape;
  n.a = a;
  n.needs_grad = node(a).needs_grad;
  n.value = std::move(out);
  return push(std::move(n));
}

Tape::Ref Tape::sum_all(Ref a) {
  check_ref(a, "sum_all");
  Node n;
  n.op = Op::kSumAll;
  n.a = a;
  n.needs_grad = node(a).needs_grad;
  double s = 0.0;
  for (double v : node(a).value.data) s += v;
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

Tape::Ref Tape::mean_all(Ref a) {
  check_ref(a, "mean_all");
  const Tensor& va = node(a).value;
  if (va.size() == 0) throw std::invalid_argument("mean_all: empty tensor");
  Node n;
  n.op = Op::kMeanAll;
  n.a = a;
  n.needs_grad = node(a).needs_grad;
  double s = 0.0;
  for (double v : va.data) s += v;
  n.value = Tensor::scalar(s / va.size());
  return push(std::move(n));
}

Tape::Ref Tape::sq_norm(Ref a) {
  check_ref(a, "sq_norm");
  Node n;
  n.op = Op::kSqNorm;
  n.a = a;
  n.needs_grad = node(a).needs_grad;
  double s = 0.0;
  for (double v : node(a).value.data) s += v * v;
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

Tape::Ref Tape::sq_dist(Ref a, Ref b) {
  check_ref(a, "sq_dist");
  check_ref(b, "sq_dist");
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  if (!va.same_shape(vb)) shape_error("sq_dist", va, vb);
  Node n;
  n.op = Op::kSqDist;
  n.a = a;
  n.b = b;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  double s = 0.0;
  for (int i = 0; i < va.size(); ++i) {
    const double d = va[i] - vb[i];
    s += d * d;
  }
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

Tape::Ref Tape::conv2d(Ref input, Ref kernel, Ref bias, int stride, int pad) {
  check_ref(input, "conv2d");
  check_ref(kernel, "conv2d");
  check_ref(bias, "conv2d");
  const Tensor& vi = node(input).value;
  const Tensor& vk = node(kernel).value;
  const Tensor& vb = node(bias).value;
  if (vi.rank() != 4 || vk.rank() != 4) {
    throw std::invalid_argument("conv2d: input/kernel must be rank 4, got " +
                                vi.shape_str() + " and " + vk.shape_str());
  }
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (pad < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  const int B = vi.dim(0), H = vi.dim(1), W = vi.dim(2), C = vi.dim(3);
  const int KH = vk.dim(0), KW = vk.dim(1), KC = vk.dim(2), OC = vk.dim(3);
  if (KC != C) shape_error("conv2d", vi, vk);
  if (vb.size() != OC) shape_error("conv2d", vk, vb);
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (W + 2 * pad - KW) / stride + 1;
  if (KH > H + 2 * pad || KW > W + 2 * pad || OH < 1 || OW < 1) {
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  }

  Node n;
  n.op = Op::kConv2d;
  n.a = input;
  n.b = kernel;
  n.c = bias;
  n.i0 = stride;
  n.i1 = pad;
  n.needs_grad = node(input).needs_grad || node(kernel).needs_grad || node(bias).needs_grad;

  // im2col: one row per output position, one column per (kh, kw, c) tap.
  const int patch = KH * KW * C;
  auto col = std::make_shared<Tensor>(Tensor({B * OH * OW, patch}));
  for (int b = 0; b < B; ++b) {
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow) {
        double* dst = &(*col)(b * OH * OW + oh * OW + ow, 0);
        for (int kh = 0; kh < KH; ++kh) {
          const int ih = oh * stride - pad + kh;
          for (int kw = 0; kw < KW; ++kw) {
            const int iw = ow * stride - pad + kw;
            double* cell = dst + (kh * KW + kw) * C;
            if (ih >= 0 && ih < H && iw >= 0 && iw < W) {
              const double* src =
                  &vi.data[((static_cast<std::size_t>(b) * H + ih) * W + iw) * C];
              for (int ch = 0; ch < C; ++ch) cell[ch] = src[ch];
            }  // else: zero padding, col was zero-initialized
          }
        }
      }
    }
  }
  n.value = Tensor({B, OH, OW, OC});
  Map out = as_mat(n.value, B * OH * OW, OC);
  out.noalias() = as_mat(*col) * as_mat(vk, patch, OC);
  out.rowwise() += as_mat(vb, 1, OC).row(0);
  n.payload = std::move(col);
  return push(std::move(n));
}

Tape::Ref Tape::mmd_biased(Ref z, Tensor prior, double sigma) {
  check_ref(z, "mmd_biased");
  const Tensor& vz = node(z).value;
  if (vz.cols() != prior.cols()) shape_error("mmd_biased", vz, prior);
  if (vz.rows() < 1 || prior.rows() < 1) {
    throw std::invalid_argument("mmd_biased: needs at least one sample per set");
  }
  if (!(sigma > 0.0)) throw std::invalid_argument("mmd_biased: bandwidth must be positive");
  const int nz = vz.rows(), np = prior.rows();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  CMap Z = as_mat(vz);
  CMap P = as_mat(std::as_const(prior));
  auto kernel_mean = [&](CMap X, CMap Y) {
    double s = 0.0;
    for (int i = 0; i < X.rows(); ++i) {
      for (int j = 0; j < Y.rows(); ++j) {
        s += std::exp(-(X.row(i) - Y.row(j)).squaredNorm() * inv);
      }
    }
    return s / (static_cast<double>(X.rows()) * static_cast<double>(Y.rows()));
  };
  const double value = kernel_mean(Z, Z) + kernel_mean(P, P) - 2.0 * kernel_mean(Z, P);

  Node n;
  n.op = Op::kMmd;
  n.a = z;
  n.c0 = sigma;
  n.needs_grad = node(z).needs_grad;
  n.value = Tensor::scalar(value);
  n.payload = std::make_shared<Tensor>(std::move(prior));
  (void)np;
  return push(std::move(n));
}

Tensor& Tape::ensure_grad(Ref r) {
  Node& n = node(r);
  if (!n.grad_set) {
    n.grad = Tensor::zeros(n.value.shape);
    n.grad_set = true;
  }
  return n.grad;
}

void Tape::accumulate(Ref r, const Tensor& g) {
  Tensor& dst = ensure_grad(r);
  for (int i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

void Tape::backward(Ref loss) {
  check_ref(loss, "backward");
  if (node(loss).value.size() != 1) {
    throw std::invalid_argument("backward: loss node must be scalar, shape " +
                                node(loss).value.shape_str());
  }
  backward({{loss, Tensor::scalar(1.0)}});
}

void Tape::backward(const std::vector<std::pair<Ref, Tensor>>& seeds) {
  if (seeds.empty()) throw std::invalid_argument("backward: no seed nodes");
  int top = -1;
  for (const auto& [r, g] : seeds) {
    check_ref(r, "backward");
    if (!g.same_shape(node(r).value)) shape_error("backward seed", node(r).value, g);
    accumulate(r, g);
    top = std::max(top, r);
  }
  for (int i = top; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.grad_set || !n.needs_grad) continue;
    backprop_node(i);
  }
}

void Tape::backprop_node(int i) {
  Node& n = nodes_[static_cast<std::size_t>(i)];
  const Tensor& g = n.grad;
  auto ng = [&](Ref r) { return node(r).needs_grad; };

  switch (n.op) {
    case Op::kConstant:
      break;
    case Op::kParam: {
      // Deposit into the store's gradient accumulator.
      Tensor& dst = store().at_index(n.param).grad;
      if (!dst.same_shape(g)) shape_error("param grad", dst, g);
      for (int k = 0; k < dst.size(); ++k) dst[k] += g[k];
      break;
    }
    case Op::kMatMul: {
      const Tensor& va = node(n.a).value;
      const Tensor& vb = node(n.b).value;
      if (ng(n.a)) as_mat(ensure_grad(n.a)).noalias() += as_mat(g) * as_mat(vb).transpose();
      if (ng(n.b)) as_mat(ensure_grad(n.b)).noalias() += as_mat(va).transpose() * as_mat(g);
      break;
    }
    case Op::kAdd:
      if (ng(n.a)) accumulate(n.a, g);
      if (ng(n.b)) accumulate(n.b, g);
      break;
    case Op::kSub: {
      if (ng(n.a)) accumulate(n.a, g);
      if (ng(n.b)) {
        Tensor& dst = ensure_grad(n.b);
        for (int k = 0; k < dst.size(); ++k) dst[k] -= g[k];
      }
      break;
    }
    case Op::kMul: {
      if (ng(n.a)) {
        Tensor& da = ensure_grad(n.a);
        const Tensor& vb = node(n.b).value;
        for (int k = 0; k < da.size(); ++k) da[k] += g[k] * vb[k];
      }
      if (ng(n.b)) {
        Tensor& db = ensure_grad(n.b);
        const Tensor& va = node(n.a).value;
        for (int k = 0; k < db.size(); ++k) db[k] += g[k] * va[k];
      }
      break;
    }
    case Op::kAddRow: {
      if (ng(n.a)) accumulate(n.a, g);
      if (ng(n.b)) {
        as_mat(ensure_grad(n.b)).row(0) += as_mat(g).colwise().sum();
      }
      break;
    }
    case Op::kAffine: {
      if (ng(n.a)) {
        Tensor& da = ensure_grad(n.a);
        for (int k = 0; k < da.size(); ++k) da[k] += n.c0 * g[k];
      }
      break;
    }
    case Op::kAddN:
      for (int r : n.aux) {
        if (ng(r)) accumulate(r, g);
      }
      break;
    case Op::kMulScalar: {
      const double s = node(n.a).value.data[0];
      const Tensor& vt = node(n.b).value;
      if (ng(n.a)) {
        double acc = 0.0;
        for (int k = 0; k < g.size(); ++k) acc += g[k] * vt[k];
        ensure_grad(n.a).data[0] += acc;
      }
      if (ng(n.b)) {
        Tensor& db = ensure_grad(n.b);
        for (int k = 0; k < db.size(); ++k) db[k] += s * g[k];
      }
      break;
    }
    case Op::kAct: {
      Tensor& da = ensure_grad(n.a);
      const Tensor& x = node(n.a).value;
      const Tensor& y = n.value;
      switch (static_cast<Activation>(n.i0)) {
        case Activation::leaky_relu:
          for (int k = 0; k < da.size(); ++k) da[k] += g[k] * (x[k] >= 0.0 ? 1.0 : n.c0);
          break;
        case Activation::tanh:
          for (int k = 0; k < da.size(); ++k) da[k] += g[k] * (1.0 - y[k] * y[k]);
          break;
        case Activation::sigmoid:
          for (int k = 0; k < da.size(); ++k) da[k] += g[k] * y[k] * (1.0 - y[k]);
          break;
        case Activation::none:
          break;
      }
      break;
    }
    case Op::kSin: {
      Tensor& da = ensure_grad(n.a);
      const Tensor& x = node(n.a).value;
      for (int k = 0; k < da.size(); ++k) da[k] += g[k] * std::cos(x[k]);
      break;
    }
    case Op::kCos: {
      Tensor& da = ensure_grad(n.a);
      const Tensor& x = node(n.a).value;
      for (int k = 0; k < da.size(); ++k) da[k] -= g[k] * std::sin(x[k]);
      break;
    }
    case Op::kExp: {
      Tensor& da = ensure_grad(n.a);
      for (int k = 0; k < da.size(); ++k) da[k] += g[k] * n.value[k];
      break;
    }
    case Op::kSoftplus: {
      Tensor& da = ensure_grad(n.a);
      const Tensor& x = node(n.a).value;
      for (int k = 0; k < da.size(); ++k) da[k] += g[k] * sigmoid(x[k]);
      break;
    }
    case Op::kSoftmaxRow: {
      Tensor& da = ensure_grad(n.a);
      const Tensor& y = n.value;
      double dot = 0.0;
      for (int k = 0; k < y.size(); ++k) dot += g[k] * y[k];
      for (int k = 0; k < y.size(); ++k) da[k] += y[k] * (g[k] - dot);
      break;
    }
    case Op::kConcatCols: {
      int at = 0;
      for (int r : n.aux) {
        const int c = node(r).value.cols();
        if (ng(r)) {
          as_mat(ensure_grad(r)) += as_mat(g).middleCols(at, c);
        }
        at += c;
      }
      break;
    }
    case Op::kStackRows: {
      for (std::size_t k = 0; k < n.aux.size(); ++k) {
        const int r = n.aux[k];
        if (ng(r)) {
          as_mat(ensure_grad(r)).row(0) += as_mat(g).row(static_cast<int>(k));
        }
      }
      break;
    }
    case Op::kRows: {
      Tensor& da = ensure_grad(n.a);
      for (std::size_t k = 0; k < n.aux.size(); ++k) {
        as_mat(da).row(n.aux[k]) += as_mat(g).row(static_cast<int>(k));
      }
      break;
    }
    case Op::kSliceCols: {
      as_mat(ensure_grad(n.a)).middleCols(n.i0, n.i1) += as_mat(g);
      break;
    }
    case Op::kReshape: {
      Tensor& da = ensure_grad(n.a);
      for (int i = 0; i < g.size(); ++i) da.data[static_cast<std::size_t>(i)] +=
          g.data[static_cast<std::size_t>(i)];
      break;
    }
    case Op::kSumAll: {
      Tensor& da = ensure_grad(n.a);
      const double s = g.data[0];
      for (double& v : da.data) v += s;
      break;
    }
    case Op::kMeanAll: {
      Tensor& da = ensure_grad(n.a);
      const double s = g.data[0] / da.size();
      for (double& v : da.data) v += s;
      break;
    }
    case Op::kSqNorm: {
      Tensor& da = ensure_grad(n.a);
      const Tensor& x = node(n.a).value;
      const double s = 2.0 * g.data[0];
      for (int k = 0; k < da.size(); ++k) da[k] += s * x[k];
      break;
    }
    case Op::kSqDist: {
      const Tensor& va = node(n.a).value;
      const Tensor& vb = node(n.b).value;
      const double s = 2.0 * g.data[0];
      if (ng(n.a)) {
        Tensor& da = ensure_grad(n.a);
        for (int k = 0; k < da.size(); ++k) da[k] += s * (va[k] - vb[k]);
      }
      if (ng(n.b)) {
        Tensor& db = ensure_grad(n.b);
        for (int k = 0; k < db.size(); ++k) db[k] -= s * (va[k] - vb[k]);
      }
      break;
    }
    case Op::kConv2d: {
      const Tensor& vi = node(n.a).value;
      const Tensor& vk = node(n.b).value;
      const int B = vi.dim(0), H = vi.dim(1), W = vi.dim(2), C = vi.dim(3);
      const int KH = vk.dim(0), KW = vk.dim(1), OC = vk.dim(3);
      const int stride = n.i0, pad = n.i1;
      const int OH = n.value.dim(1), OW = n.value.dim(2);
      const int patch = KH * KW * C;
      const Tensor& col = *n.payload;
      CMap gout = as_mat(g, B * OH * OW, OC);
      if (ng(n.c)) {
        as_mat(ensure_grad(n.c), 1, OC).row(0) += gout.colwise().sum();
      }
      if (ng(n.b)) {
        as_mat(ensure_grad(n.b), patch, OC).noalias() += as_mat(col).transpose() * gout;
      }
      if (ng(n.a)) {
        RowMat dcol = gout * as_mat(vk, patch, OC).transpose();  // (B*OH*OW, patch)
        Tensor& di = ensure_grad(n.a);
        for (int b = 0; b < B; ++b) {
          for (int oh = 0; oh < OH; ++oh) {
            for (int ow = 0; ow < OW; ++ow) {
              const double* src = dcol.row(b * OH * OW + oh * OW + ow).data();
              for (int kh = 0; kh < KH; ++kh) {
                const int ih = oh * stride - pad + kh;
                if (ih < 0 || ih >= H) continue;
                for (int kw = 0; kw < KW; ++kw) {
                  const int iw = ow * stride - pad + kw;
                  if (iw < 0 || iw >= W) continue;
                  double* dst =
                      &di.data[((static_cast<std::size_t>(b) * H + ih) * W + iw) * C];
                  const double* cell = src + (kh * KW + kw) * C;
                  for (int ch = 0; ch < C; ++ch) dst[ch] += cell[ch];
                }
              }
            }
          }
        }
      }
      break;
    }
    case Op::kMmd: {
      if (!ng(n.a)) break;
      const Tensor& vz = node(n.a).value;
      const Tensor& prior = *n.payload;
      const int nz = vz.rows(), np = prior.rows();
      const double sigma = n.c0;
      const double inv = 1.0 / (2.0 * sigma * sigma);
      const double gs = g.data[0];
      CMap Z = as_mat(vz);
      CMap P = as_mat(prior);
      Map dZ = as_mat(ensure_grad(n.a));
      // d/dz_i of the biased statistic: kernels pull z toward the other z's
      // weighted 2/n^2 and toward prior samples weighted 2/(n m).
      const double wz = 2.0 / (static_cast<double>(nz) * nz);
      const double wp = 2.0 / (static_cast<double>(nz) * np);
      for (int i = 0; i < nz; ++i) {
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(vz.cols());
        for (int j = 0; j < nz; ++j) {
          const Eigen::RowVectorXd d = Z.row(i) - Z.row(j);
          acc += wz * std::exp(-d.squaredNorm() * inv) * (-d * 2.0 * inv);
        }
        for (int j = 0; j < np; ++j) {
          const Eigen::RowVectorXd d = Z.row(i) - P.row(j);
          acc -= wp * std::exp(-d.squaredNorm() * inv) * (-d * 2.0 * inv);
        }
        dZ.row(i) += gs * acc;
      }
      break;
    }
  }
}

}  // namespace stgdat
