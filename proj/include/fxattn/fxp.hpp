#pragma once

// Q-format fixed-point arithmetic in the style of HLS ap_fixed<W,I>.
//
// A value is a signed integer `raw` interpreted as raw * 2^-frac_bits.  Every
// operation produces a raw that fits in int_bits + frac_bits bits, either by
// saturating at the format bounds or by wrapping modulo 2^width.

#include <cstdint>
#include <string>
#include <string_view>

namespace fxattn {

enum class Overflow : std::uint8_t { Saturate, Wrap };
enum class Rounding : std::uint8_t { TruncateTowardNegInf, RoundNearestEven };

// Wide enough for the exact product of two 64-bit raws.
using WideInt = __int128;

struct FxFormat {
  std::uint8_t int_bits = 10;  // includes the sign bit
  std::uint8_t frac_bits = 10;
  Overflow overflow = Overflow::Saturate;
  Rounding rounding = Rounding::RoundNearestEven;

  constexpr FxFormat() = default;
  // Throws std::invalid_argument unless int_bits >= 1, frac_bits >= 0 and the
  // total width is at most 64.
  FxFormat(int int_bits, int frac_bits, Overflow overflow = Overflow::Saturate,
           Rounding rounding = Rounding::RoundNearestEven);

  constexpr int width() const { return int_bits + frac_bits; }
  std::int64_t raw_max() const;
  std::int64_t raw_min() const;
  double max_value() const;
  double min_value() const;
  double lsb() const;

  // `fixed<W,I>` for the default Saturate + RoundNearestEven pair, otherwise
  // `fixed<W,I,Q,O>` with Q in {TRN, RND_CONV} and O in {SAT, WRAP}.
  std::string to_string() const;
  // Accepts the forms produced by to_string().  Throws std::invalid_argument.
  static FxFormat parse(std::string_view text);

  friend constexpr bool operator==(const FxFormat&, const FxFormat&) = default;
};

struct FxValue {
  std::int64_t raw = 0;
  FxFormat format{};

  friend constexpr bool operator==(const FxValue&, const FxValue&) = default;
};

// Nearest representable value per fmt.rounding, then overflow handling.
// Throws std::domain_error on NaN (and on infinities under Wrap).
FxValue quantize(double x, FxFormat fmt);
double dequantize(FxValue v);

// Throw std::invalid_argument when the operand formats differ.
FxValue fx_add(FxValue a, FxValue b);
FxValue fx_sub(FxValue a, FxValue b);
FxValue fx_mul(FxValue a, FxValue b);

// Shift right by `shift` bits using the rounding mode; shift may be 0.
WideInt round_shift(WideInt v, int shift, Rounding mode);
// Map an exact integer onto the format's raw range per fmt.overflow.
std::int64_t apply_overflow(WideInt v, FxFormat fmt);
// Accumulator with `acc_frac` fractional bits -> value in fmt (one rounding).
FxValue from_accumulator(WideInt acc, int acc_frac, FxFormat fmt);

}  // namespace fxattn
