#include "fxattn/fxp.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>

namespace fxattn {

namespace {

void require_same(const FxFormat& a, const FxFormat& b, const char* op) {
  if (!(a == b)) {
    throw std::invalid_argument(std::string(op) + ": format mismatch " + a.to_string() + " vs " +
                                b.to_string());
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  return s;
}

int parse_int(std::string_view s, std::string_view whole) {
  s = trim(s);
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw std::invalid_argument("bad fixed-point format '" + std::string(whole) + "'");
  }
  return v;
}

}  // namespace

FxFormat::FxFormat(int ib, int fb, Overflow o, Rounding r) : overflow(o), rounding(r) {
  if (ib < 1 || fb < 0 || ib + fb > 64) {
    throw std::invalid_argument("invalid fixed-point format: int_bits=" + std::to_string(ib) +
                                " frac_bits=" + std::to_string(fb));
  }
  int_bits = static_cast<std::uint8_t>(ib);
  frac_bits = static_cast<std::uint8_t>(fb);
}

std::int64_t FxFormat::raw_max() const {
  return static_cast<std::int64_t>((static_cast<std::uint64_t>(1) << (width() - 1)) - 1);
}

std::int64_t FxFormat::raw_min() const { return -raw_max() - 1; }

double FxFormat::max_value() const { return std::ldexp(static_cast<double>(raw_max()), -frac_bits); }
double FxFormat::min_value() const { return std::ldexp(static_cast<double>(raw_min()), -frac_bits); }
double FxFormat::lsb() const { return std::ldexp(1.0, -frac_bits); }

std::string FxFormat::to_string() const {
  std::string s = "fixed<" + std::to_string(width()) + "," + std::to_string(int_bits);
  if (overflow != Overflow::Saturate || rounding != Rounding::RoundNearestEven) {
    s += rounding == Rounding::RoundNearestEven ? ",RND_CONV" : ",TRN";
    s += overflow == Overflow::Saturate ? ",SAT" : ",WRAP";
  }
  return s + ">";
}

FxFormat FxFormat::parse(std::string_view text) {
  const std::string_view whole = text;
  text = trim(text);
  constexpr std::string_view prefix = "fixed<";
  if (text.substr(0, prefix.size()) != prefix || text.empty() || text.back() != '>') {
    throw std::invalid_argument("bad fixed-point format '" + std::string(whole) +
                                "', expected fixed<W,I>");
  }
  text = text.substr(prefix.size(), text.size() - prefix.size() - 1);

  std::string_view parts[4];
  std::size_t n = 0;
  while (true) {
    const auto comma = text.find(',');
    if (n == 4) throw std::invalid_argument("bad fixed-point format '" + std::string(whole) + "'");
    parts[n++] = trim(text.substr(0, comma));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  if (n != 2 && n != 4) {
    throw std::invalid_argument("bad fixed-point format '" + std::string(whole) + "'");
  }
  const int total = parse_int(parts[0], whole);
  const int ib = parse_int(parts[1], whole);

  Rounding r = Rounding::RoundNearestEven;
  Overflow o = Overflow::Saturate;
  if (n == 4) {
    if (parts[2] == "TRN") {
      r = Rounding::TruncateTowardNegInf;
    } else if (parts[2] != "RND_CONV") {
      throw std::invalid_argument("unknown rounding mode '" + std::string(parts[2]) + "'");
    }
    if (parts[3] == "WRAP") {
      o = Overflow::Wrap;
    } else if (parts[3] != "SAT") {
      throw std::invalid_argument("unknown overflow mode '" + std::string(parts[3]) + "'");
    }
  }
  return FxFormat(ib, total - ib, o, r);
}

WideInt round_shift(WideInt v, int shift, Rounding mode) {
  if (shift <= 0) return v;
  const WideInt q = v >> shift;  // arithmetic: floor division by 2^shift
  if (mode == Rounding::TruncateTowardNegInf) return q;
  const WideInt rem = v - (q << shift);
  const WideInt half = WideInt{1} << (shift - 1);
  if (rem > half || (rem == half && (q & 1) != 0)) return q + 1;
  return q;
}

std::int64_t apply_overflow(WideInt v, FxFormat fmt) {
  const WideInt hi = fmt.raw_max();
  const WideInt lo = fmt.raw_min();
  if (v >= lo && v <= hi) return static_cast<std::int64_t>(v);
  if (fmt.overflow == Overflow::Saturate) return static_cast<std::int64_t>(v > hi ? hi : lo);

  using U = unsigned __int128;
  const int w = fmt.width();
  const U mask = (U{1} << w) - 1;
  U u = static_cast<U>(v) & mask;
  if (u >> (w - 1)) u |= ~mask;  // sign-extend
  return static_cast<std::int64_t>(static_cast<WideInt>(u));
}

FxValue from_accumulator(WideInt acc, int acc_frac, FxFormat fmt) {
  const int shift = acc_frac - fmt.frac_bits;
  const WideInt r = shift >= 0 ? round_shift(acc, shift, fmt.rounding) : acc * (WideInt{1} << -shift);
  return FxValue{apply_overflow(r, fmt), fmt};
}

FxValue quantize(double x, FxFormat fmt) {
  if (std::isnan(x)) throw std::domain_error("quantize: NaN input");
  const double scaled = std::ldexp(x, fmt.frac_bits);
  double r = std::floor(scaled);
  if (fmt.rounding == Rounding::RoundNearestEven) {
    const double diff = scaled - r;
    if (diff > 0.5 || (diff == 0.5 && std::fmod(r, 2.0) != 0.0)) r += 1.0;
  }

  const double bound = std::ldexp(1.0, fmt.width() - 1);
  if (r >= -bound && r < bound) return FxValue{static_cast<std::int64_t>(r), fmt};

  if (fmt.overflow == Overflow::Saturate) {
    return FxValue{r > 0 ? fmt.raw_max() : fmt.raw_min(), fmt};
  }
  if (std::isinf(r)) throw std::domain_error("quantize: infinite input under Wrap overflow");
  const double modulus = 2.0 * bound;
  double m = std::fmod(r, modulus);
  if (m < 0) m += modulus;
  if (m >= bound) m -= modulus;
  return FxValue{static_cast<std::int64_t>(m), fmt};
}

double dequantize(FxValue v) {
  return std::ldexp(static_cast<double>(v.raw), -v.format.frac_bits);
}

FxValue fx_add(FxValue a, FxValue b) {
  require_same(a.format, b.format, "fx_add");
  return FxValue{apply_overflow(WideInt{a.raw} + b.raw, a.format), a.format};
}

FxValue fx_sub(FxValue a, FxValue b) {
  require_same(a.format, b.format, "fx_sub");
  return FxValue{apply_overflow(WideInt{a.raw} - b.raw, a.format), a.format};
}

FxValue fx_mul(FxValue a, FxValue b) {
  require_same(a.format, b.format, "fx_mul");
  const WideInt product = WideInt{a.raw} * b.raw;
  return from_accumulator(product, 2 * a.format.frac_bits, a.format);
}

}  // namespace fxattn
