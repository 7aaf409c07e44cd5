#include "stgdat/tensor.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "stgdat/rng.hpp"

namespace stgdat {

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  data.assign(n, 0.0);
}

Tensor Tensor::full(std::vector<int> s, double v) {
  Tensor t(std::move(s));
  std::fill(t.data.begin(), t.data.end(), v);
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t({1, 1});
  t.data[0] = v;
  return t;
}

Tensor Tensor::row(const std::vector<double>& values) {
  Tensor t({1, static_cast<int>(values.size())});
  t.data.assign(values.begin(), values.end());
  return t;
}

Tensor Tensor::uniform(std::vector<int> s, double lo, double hi, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::normal(std::vector<int> s, double mean, double stddev, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = rng.normal(mean, stddev);
  return t;
}

int Tensor::rows() const {
  if (rank() == 1) return 1;
  if (rank() == 2) return shape[0];
  throw std::logic_error("Tensor::rows on rank-" + std::to_string(rank()) + " tensor");
}

int Tensor::cols() const {
  if (rank() == 1) return shape[0];
  if (rank() == 2) return shape[1];
  throw std::logic_error("Tensor::cols on rank-" + std::to_string(rank()) + " tensor");
}

double& Tensor::operator()(int r, int c) {
  return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()) +
              static_cast<std::size_t>(c)];
}

double Tensor::operator()(int r, int c) const {
  return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols()) +
              static_cast<std::size_t>(c)];
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  s += ")";
  return s;
}

}  // namespace stgdat
