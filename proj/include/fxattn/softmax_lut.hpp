#pragma once

// Softmax from two lookup tables: one holding e^x over [lo, hi), one holding
// 1/x over a strictly positive range.  No transcendental is evaluated at
// inference time.

#include <cstddef>
#include <span>
#include <vector>

#include "fxattn/fxp.hpp"

namespace fxattn {

struct LutTable {
  std::size_t size = 0;  // power of two
  double lo = 0.0;
  double hi = 0.0;
  std::vector<FxValue> entries;

  // clamp(floor((x - lo) * size / (hi - lo)), 0, size - 1)
  std::size_t index_of(double x) const;
  const FxValue& lookup(double x) const { return entries[index_of(x)]; }
  // Left edge of bin k.
  double bin_start(std::size_t k) const;
};

struct SoftmaxConfig {
  LutTable exp_table;
  LutTable inv_table;
  FxFormat io_format;
};

// Table geometry shared by every softmax instance of a model.  The inverse
// table range is derived per instance from the vector length n as [1, n + 1).
struct SoftmaxLutSpec {
  std::size_t exp_size = 1024;
  double exp_lo = -8.0;
  double exp_hi = 0.0;
  std::size_t inv_size = 1024;

  friend bool operator==(const SoftmaxLutSpec&, const SoftmaxLutSpec&) = default;
};

// Entries are quantize(e^x) at bin left edges.  Throws std::invalid_argument
// when size is not a power of two or lo >= hi.
LutTable build_exp_table(std::size_t size, double lo, double hi, FxFormat fmt);
// Entries are quantize(1/x) at bin left edges; requires 0 < lo < hi.
LutTable build_inv_table(std::size_t size, double lo, double hi, FxFormat fmt);

SoftmaxConfig make_softmax_config(const SoftmaxLutSpec& spec, std::size_t n, FxFormat fmt);

// Max-subtracted table softmax: out_i = exp[v_i - max] * inv[sum_j exp[v_j - max]].
// Inputs outside a table's range clamp to its edge bins.
std::vector<FxValue> softmax_lut(const SoftmaxConfig& cfg, std::span<const FxValue> v);

// Numerically stable double-precision softmax.
std::vector<double> softmax_exact(std::span<const double> v);

}  // namespace fxattn
