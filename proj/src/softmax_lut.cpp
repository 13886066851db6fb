#include "fxattn/softmax_lut.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fxattn {

namespace {

template <class F>
LutTable build_table(std::size_t size, double lo, double hi, FxFormat fmt, F&& generator) {
  if (size == 0 || !std::has_single_bit(size)) {
    throw std::invalid_argument("lookup table size must be a power of two, got " +
                                std::to_string(size));
  }
  if (!(lo < hi)) throw std::invalid_argument("lookup table range requires lo < hi");
  LutTable t;
  t.size = size;
  t.lo = lo;
  t.hi = hi;
  t.entries.reserve(size);
  for (std::size_t k = 0; k < size; ++k) t.entries.push_back(quantize(generator(t.bin_start(k)), fmt));
  return t;
}

}  // namespace

std::size_t LutTable::index_of(double x) const {
  const double pos = std::floor((x - lo) * static_cast<double>(size) / (hi - lo));
  if (!(pos > 0.0)) return 0;
  if (pos >= static_cast<double>(size - 1)) return size - 1;
  return static_cast<std::size_t>(pos);
}

double LutTable::bin_start(std::size_t k) const {
  return lo + static_cast<double>(k) * (hi - lo) / static_cast<double>(size);
}

LutTable build_exp_table(std::size_t size, double lo, double hi, FxFormat fmt) {
  return build_table(size, lo, hi, fmt, [](double x) { return std::exp(x); });
}

LutTable build_inv_table(std::size_t size, double lo, double hi, FxFormat fmt) {
  if (!(lo > 0.0)) throw std::invalid_argument("inverse table range must exclude zero (lo > 0)");
  return build_table(size, lo, hi, fmt, [](double x) { return 1.0 / x; });
}

SoftmaxConfig make_softmax_config(const SoftmaxLutSpec& spec, std::size_t n, FxFormat fmt) {
  if (n == 0) throw std::invalid_argument("softmax length must be positive");
  return SoftmaxConfig{build_exp_table(spec.exp_size, spec.exp_lo, spec.exp_hi, fmt),
                       build_inv_table(spec.inv_size, 1.0, static_cast<double>(n + 1), fmt), fmt};
}

std::vector<FxValue> softmax_lut(const SoftmaxConfig& cfg, std::span<const FxValue> v) {
  if (v.empty()) throw std::invalid_argument("softmax_lut: empty input");
  const FxFormat fmt = cfg.io_format;
  std::int64_t max_raw = v[0].raw;
  for (const auto& x : v) {
    if (!(x.format == fmt)) throw std::invalid_argument("softmax_lut: input format mismatch");
    max_raw = std::max(max_raw, x.raw);
  }

  const double scale = std::ldexp(1.0, -fmt.frac_bits);
  std::vector<FxValue> e(v.size());
  FxValue sum{0, fmt};
  for (std::size_t i = 0; i < v.size(); ++i) {
    // Exact non-positive difference; it never needs to fit the io format.
    const double shifted = static_cast<double>(WideInt{v[i].raw} - max_raw) * scale;
    e[i] = cfg.exp_table.lookup(shifted);
    sum = fx_add(sum, e[i]);
  }
  const FxValue inv = cfg.inv_table.lookup(dequantize(sum));
  for (auto& x : e) x = fx_mul(x, inv);
  return e;
}

std::vector<double> softmax_exact(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("softmax_exact: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
  return out;
}

}  // namespace fxattn
