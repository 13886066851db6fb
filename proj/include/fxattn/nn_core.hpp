#pragma once

// Dense kernels written once against an arithmetic policy so the double
// reference path and the fixed-point path share their evaluation order.
//
// A policy provides value_type, from_real/to_real, dot (sum of products plus
// bias with a single final rounding), add, mul, relu and softmax.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fxattn/error.hpp"
#include "fxattn/fxp.hpp"
#include "fxattn/softmax_lut.hpp"

namespace fxattn {

template <class T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<T> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) {
      throw ShapeError("matrix data length " + std::to_string(data.size()) + " != " +
                       std::to_string(r) + "x" + std::to_string(c));
    }
  }

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

enum class Activation { None, ReLU, Softmax };

template <class T>
struct DenseLayer {
  Matrix<T> weights;  // out x in
  std::vector<T> bias;
  Activation activation = Activation::None;

  std::size_t in_dim() const { return weights.cols; }
  std::size_t out_dim() const { return weights.rows; }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct FloatArith {
  using value_type = double;

  double from_real(double x) const { return x; }
  double to_real(double x) const { return x; }
  double zero() const { return 0.0; }

  double dot(std::span<const double> a, std::span<const double> b, double bias) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc + bias;
  }
  double add(double a, double b) const { return a + b; }
  double mul(double a, double b) const { return a * b; }
  double relu(double x) const { return x > 0.0 ? x : 0.0; }
  std::vector<double> softmax(const SoftmaxConfig*, std::span<const double> v) const {
    return softmax_exact(v);
  }
};

struct FixedArith {
  using value_type = FxValue;
  FxFormat fmt;

  FxValue from_real(double x) const { return quantize(x, fmt); }
  double to_real(FxValue v) const { return dequantize(v); }
  FxValue zero() const { return FxValue{0, fmt}; }

  // Exact double-width accumulation, one rounding at the end.
  FxValue dot(std::span<const FxValue> a, std::span<const FxValue> b, FxValue bias) const {
    WideInt acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!(a[i].format == fmt) || !(b[i].format == fmt)) {
        throw std::invalid_argument("dot: operand format differs from " + fmt.to_string());
      }
      acc += WideInt{a[i].raw} * b[i].raw;
    }
    acc += WideInt{bias.raw} << fmt.frac_bits;
    return from_accumulator(acc, 2 * fmt.frac_bits, fmt);
  }
  FxValue add(FxValue a, FxValue b) const { return fx_add(a, b); }
  FxValue mul(FxValue a, FxValue b) const { return fx_mul(a, b); }
  FxValue relu(FxValue x) const { return x.raw > 0 ? x : zero(); }
  std::vector<FxValue> softmax(const SoftmaxConfig* cfg, std::span<const FxValue> v) const {
    if (cfg == nullptr) throw std::invalid_argument("fixed-point softmax needs a SoftmaxConfig");
    return softmax_lut(*cfg, v);
  }
};

template <class A>
using Vec = std::vector<typename A::value_type>;

template <class A>
Matrix<typename A::value_type> convert(const A& arith, const Matrix<double>& m) {
  Matrix<typename A::value_type> out;
  out.rows = m.rows;
  out.cols = m.cols;
  out.data.reserve(m.data.size());
  for (double x : m.data) out.data.push_back(arith.from_real(x));
  return out;
}

template <class A>
Vec<A> convert(const A& arith, std::span<const double> v) {
  Vec<A> out;
  out.reserve(v.size());
  for (double x : v) out.push_back(arith.from_real(x));
  return out;
}

template <class A>
DenseLayer<typename A::value_type> convert(const A& arith, const DenseLayer<double>& layer) {
  return {convert(arith, layer.weights), convert(arith, std::span<const double>(layer.bias)),
          layer.activation};
}

// m * v + bias with one rounding per output element.
template <class A>
Vec<A> affine(const A& arith, const Matrix<typename A::value_type>& m,
              std::span<const typename A::value_type> v,
              std::span<const typename A::value_type> bias) {
  if (v.size() != m.cols) {
    throw ShapeError("matvec: vector length " + std::to_string(v.size()) + " != matrix cols " +
                     std::to_string(m.cols));
  }
  if (!bias.empty() && bias.size() != m.rows) {
    throw ShapeError("affine: bias length " + std::to_string(bias.size()) + " != matrix rows " +
                     std::to_string(m.rows));
  }
  Vec<A> out;
  out.reserve(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    out.push_back(arith.dot(m.row(i), v, bias.empty() ? arith.zero() : bias[i]));
  }
  return out;
}

template <class A>
Vec<A> matvec(const A& arith, const Matrix<typename A::value_type>& m,
              std::span<const typename A::value_type> v) {
  return affine(arith, m, v, {});
}

template <class A>
Vec<A> apply_activation(const A& arith, Activation act, Vec<A> v, const SoftmaxConfig* softmax) {
  switch (act) {
    case Activation::None:
      return v;
    case Activation::ReLU:
      for (auto& x : v) x = arith.relu(x);
      return v;
    case Activation::Softmax:
      return arith.softmax(softmax, v);
  }
  return v;
}

// activation(W v + b).  `softmax` is only consulted for Softmax layers in fixed mode.
template <class A>
Vec<A> dense_forward(const A& arith, const DenseLayer<typename A::value_type>& layer,
                     std::span<const typename A::value_type> v,
                     const SoftmaxConfig* softmax = nullptr) {
  if (layer.bias.size() != layer.weights.rows) {
    throw ShapeError("dense layer bias length " + std::to_string(layer.bias.size()) +
                     " != output width " + std::to_string(layer.weights.rows));
  }
  return apply_activation(arith, layer.activation, affine(arith, layer.weights, v, layer.bias), softmax);
}

template <class T>
std::vector<T> flatten(const Matrix<T>& m) {
  return m.data;
}

template <class T>
Matrix<T> unflatten(std::span<const T> v, std::size_t rows, std::size_t cols) {
  return Matrix<T>(rows, cols, std::vector<T>(v.begin(), v.end()));
}

}  // namespace fxattn
