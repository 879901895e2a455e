#pragma once
// Posit(4,1) codec with power-of-two scaled variants, plus a general
// P(n, es) decoder used for validation.
//
// Value table of the unscaled Posit(4,1) set, indexed by the signed
// two's-complement reading of the code (-7..7):
//   -16 -4 -2 -1 -0.5 -0.25 -0.0625 0 0.0625 0.25 0.5 1 2 4 16
// The scaled variants divide every entry by 4 or 8, which in the raw
// (sign, power-of-two) form is only a shift of the binary point.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>

#include "mixq/error.hpp"

namespace mixq {

enum class ScaleVariant : std::uint8_t { Unit, Sc4, Sc8 };

inline constexpr std::array<ScaleVariant, 3> kAllVariants = {
    ScaleVariant::Unit, ScaleVariant::Sc4, ScaleVariant::Sc8};

// Binary-point shift applied by a variant: value = unit_value * 2^offset.
constexpr int variant_exp_offset(ScaleVariant v) noexcept {
  switch (v) {
    case ScaleVariant::Sc4: return -2;
    case ScaleVariant::Sc8: return -3;
    case ScaleVariant::Unit: break;
  }
  return 0;
}

inline double variant_scale(ScaleVariant v) noexcept {
  return std::ldexp(1.0, variant_exp_offset(v));
}

inline std::string_view to_string(ScaleVariant v) noexcept {
  switch (v) {
    case ScaleVariant::Sc4: return "sc4";
    case ScaleVariant::Sc8: return "sc8";
    case ScaleVariant::Unit: break;
  }
  return "unit";
}

inline ScaleVariant parse_variant(std::string_view s) {
  if (s == "unit") return ScaleVariant::Unit;
  if (s == "sc4") return ScaleVariant::Sc4;
  if (s == "sc8") return ScaleVariant::Sc8;
  throw DataError("unknown posit variant '" + std::string(s) + "'");
}

inline std::ostream& operator<<(std::ostream& os, ScaleVariant v) { return os << to_string(v); }

// P(n, es) format descriptor.
struct PositConfig {
  int n = 4;
  int es = 1;

  constexpr PositConfig() = default;
  PositConfig(int bits, int exp_bits) : n(bits), es(exp_bits) {
    if (n < 2 || n > 32) throw ContractError("posit width must be in [2, 32]");
    if (es < 0 || es > 3) throw ContractError("posit exponent width must be in [0, 3]");
    if (es >= n - 1 && !(n == 2 && es == 0))
      throw ContractError("posit exponent width must be smaller than n - 1");
  }
};

// A 4-bit Posit(4,1) pattern together with the scale variant it is read in.
struct Posit4Code {
  std::uint8_t bits = 0;
  ScaleVariant variant = ScaleVariant::Unit;

  static constexpr std::uint8_t kNaR = 0b1000;

  constexpr Posit4Code() = default;
  constexpr Posit4Code(std::uint8_t b, ScaleVariant v = ScaleVariant::Unit)
      : bits(static_cast<std::uint8_t>(b & 0xF)), variant(v) {}

  constexpr bool is_nar() const noexcept { return bits == kNaR; }
  constexpr bool is_zero() const noexcept { return bits == 0; }
  // Two's-complement reading of the 4-bit pattern, -8..7.
  constexpr int signed_value() const noexcept { return bits >= 8 ? int(bits) - 16 : int(bits); }

  friend constexpr bool operator==(const Posit4Code&, const Posit4Code&) = default;
};

constexpr Posit4Code twos_complement_negate(Posit4Code c) noexcept {
  return Posit4Code(static_cast<std::uint8_t>((~c.bits + 1) & 0xF), c.variant);
}

// Decoded (sign, power-of-two) form used inside the MAC datapath.
struct RawPosit {
  int sign = 1;  // +1 or -1
  int exp = 0;   // magnitude is exactly 2^exp, variant offset included

  friend constexpr bool operator==(const RawPosit&, const RawPosit&) = default;

  double value() const noexcept { return sign * std::ldexp(1.0, exp); }
  // Exponent without the variant's binary-point shift (-4..4).
  constexpr int unit_exp(ScaleVariant v) const noexcept { return exp - variant_exp_offset(v); }
  // One-hot magnitude in a 9-position fixed-point field whose LSB weighs 2^-4
  // (unscaled exponent).
  constexpr std::uint16_t one_hot_field(ScaleVariant v) const noexcept {
    return static_cast<std::uint16_t>(1u << (unit_exp(v) + 4));
  }
};

enum class RawKind : std::uint8_t { Zero, NaR, Value };

struct RawDecode {
  RawKind kind = RawKind::Zero;
  RawPosit raw{};
};

// General val(p) decoder: (-1)^s * useed^k * 2^e * (1 + f). Returns
// std::nullopt for NaR. Negative patterns decode through two's-complement
// negation; truncated exponent bits read as zero.
inline std::optional<double> posit_val_general(std::uint32_t bits, PositConfig cfg) {
  const int n = cfg.n;
  const std::uint64_t mask = (1ull << n) - 1;
  if ((static_cast<std::uint64_t>(bits) & ~mask) != 0)
    throw ContractError("posit pattern does not fit in n bits");
  std::uint64_t p = bits;
  const std::uint64_t sign_bit = 1ull << (n - 1);
  if (p == 0) return 0.0;
  if (p == sign_bit) return std::nullopt;

  const bool negative = (p & sign_bit) != 0;
  if (negative) p = (~p + 1) & mask;

  // Regime: run of identical bits starting right after the sign.
  int pos = n - 2;
  const bool first = ((p >> pos) & 1u) != 0;
  int run = 0;
  while (pos >= 0 && (((p >> pos) & 1u) != 0) == first) {
    ++run;
    --pos;
  }
  const int k = first ? run - 1 : -run;
  --pos;  // terminating bit, if any

  int e = 0;
  for (int i = 0; i < cfg.es; ++i) {
    e <<= 1;
    if (pos >= 0) {
      e |= static_cast<int>((p >> pos) & 1u);
      --pos;
    }
  }

  const int frac_bits = pos >= 0 ? pos + 1 : 0;
  const std::uint64_t frac = frac_bits > 0 ? (p & ((1ull << frac_bits) - 1)) : 0;
  const double mantissa = 1.0 + std::ldexp(static_cast<double>(frac), -frac_bits);
  const int scale = k * (1 << cfg.es) + e;
  const double v = std::ldexp(mantissa, scale);
  return negative ? -v : v;
}

namespace detail {

constexpr std::array<RawDecode, 16> make_raw_lut() {
  // Positive Posit(4,1) codes 1..7 are exact powers of two: 2^-4, 2^-2, 2^-1, 2^0, 2^1, 2^2, 2^4.
  constexpr std::array<int, 8> pos_exp = {0, -4, -2, -1, 0, 1, 2, 4};
  std::array<RawDecode, 16> lut{};
  for (int code = 0; code < 16; ++code) {
    if (code == 0) {
      lut[code] = {RawKind::Zero, {}};
    } else if (code == 8) {
      lut[code] = {RawKind::NaR, {}};
    } else if (code < 8) {
      lut[code] = {RawKind::Value, {1, pos_exp[code]}};
    } else {
      lut[code] = {RawKind::Value, {-1, pos_exp[16 - code]}};
    }
  }
  return lut;
}

inline constexpr std::array<RawDecode, 16> kRawLut = make_raw_lut();

}  // namespace detail

// 16-entry lookup into raw form; the variant offset is folded into exp.
constexpr RawDecode posit_decode_raw(Posit4Code c) noexcept {
  RawDecode d = detail::kRawLut[c.bits];
  if (d.kind == RawKind::Value) d.raw.exp += variant_exp_offset(c.variant);
  return d;
}

// Decoded value; std::nullopt stands for NaR.
inline std::optional<double> posit_decode(Posit4Code c) noexcept {
  const RawDecode d = posit_decode_raw(c);
  switch (d.kind) {
    case RawKind::Zero: return 0.0;
    case RawKind::NaR: return std::nullopt;
    case RawKind::Value: break;
  }
  return d.raw.value();
}

// The 15 representable values of a variant, strictly increasing. Index i
// corresponds to the code whose signed reading is i - 7.
inline const std::array<double, 15>& posit_table(ScaleVariant v) noexcept {
  static const std::array<std::array<double, 15>, 3> tables = [] {
    std::array<std::array<double, 15>, 3> out{};
    for (ScaleVariant var : kAllVariants)
      for (int i = 0; i < 15; ++i) {
        const auto code = static_cast<std::uint8_t>((i - 7) & 0xF);
        out[static_cast<std::size_t>(var)][static_cast<std::size_t>(i)] =
            *posit_decode(Posit4Code(code, var));
      }
    return out;
  }();
  return tables[static_cast<std::size_t>(v)];
}

inline Posit4Code code_from_table_index(int index, ScaleVariant v) noexcept {
  return Posit4Code(static_cast<std::uint8_t>((index - 7) & 0xF), v);
}

// Nearest table value; midpoints go to the smaller magnitude, values beyond
// the extremes saturate. Never returns NaR.
inline Posit4Code posit_quantize(double x, ScaleVariant v) {
  if (!std::isfinite(x)) throw DomainError("posit_quantize: non-finite input");
  const auto& table = posit_table(v);
  if (x <= table.front()) return code_from_table_index(0, v);
  if (x >= table.back()) return code_from_table_index(14, v);
  int hi = 1;
  while (table[static_cast<std::size_t>(hi)] < x) ++hi;
  const int lo = hi - 1;
  const double a = table[static_cast<std::size_t>(lo)];
  const double b = table[static_cast<std::size_t>(hi)];
  if (x == b) return code_from_table_index(hi, v);
  const double mid = 0.5 * (a + b);  // exact: both are dyadic
  if (x < mid) return code_from_table_index(lo, v);
  if (x > mid) return code_from_table_index(hi, v);
  return code_from_table_index(std::abs(a) <= std::abs(b) ? lo : hi, v);
}

inline double posit_round(double x, ScaleVariant v) { return *posit_decode(posit_quantize(x, v)); }

inline std::string bit_pattern(std::uint8_t bits) {
  std::string s(4, '0');
  for (int i = 0; i < 4; ++i)
    if ((bits >> (3 - i)) & 1u) s[static_cast<std::size_t>(i)] = '1';
  return s;
}

// CSV of all 16 codes: code,bit_pattern,value_unit,value_sc4,value_sc8.
inline std::string posit_decode_table_csv() {
  std::ostringstream os;
  os.precision(17);
  os << "code,bit_pattern,value_unit,value_sc4,value_sc8\n";
  for (int code = 0; code < 16; ++code) {
    const auto b = static_cast<std::uint8_t>(code);
    os << code << ',' << bit_pattern(b);
    for (ScaleVariant v : kAllVariants) {
      const auto val = posit_decode(Posit4Code(b, v));
      os << ',';
      if (val) os << *val; else os << "NaR";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace mixq
