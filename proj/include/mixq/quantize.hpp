#pragma once
// Weight and activation quantizers with their backward estimators.
//
//   FixP weights:   scale = mean|W| * (2^n - 1) / 2^(n-1)
//                   W_q   = low + step * round((clip(W / scale, low, high) - low) / step)
//                   effective weight = scale * W_q
//   Posit weights:  nearest value in the variant's table
//   Activations:    PACT clip to [0, alpha], then uniform n-bit unsigned codes
//
// round() is half-away-from-zero throughout.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "mixq/posit.hpp"
#include "mixq/tensor.hpp"

namespace mixq {

inline double round_half_away(double x) noexcept { return std::round(x); }

// ---------------------------------------------------------------------------
// FixP

struct FixPParams {
  int n = 4;
  int int_bits = 2;
  int frac_bits = 2;
  double low = -2.0;
  double high = 1.75;
  double scale = 0.0;  // per-tensor; 0 until computed

  // Signed two's-complement range for an int.frac split.
  static FixPParams from_split(int int_bits, int frac_bits) {
    FixPParams p;
    p.n = int_bits + frac_bits;
    p.int_bits = int_bits;
    p.frac_bits = frac_bits;
    p.low = -std::ldexp(1.0, int_bits - 1);
    p.high = std::ldexp(1.0, int_bits - 1) - std::ldexp(1.0, -frac_bits);
    p.validate();
    return p;
  }

  void validate() const {
    if (n < 2 || n > 16) throw ContractError("FixP width must be in [2, 16]");
    if (int_bits < 0 || frac_bits < 0 || int_bits + frac_bits != n)
      throw ContractError("FixP int_bits + frac_bits must equal n");
    if (!(low < high)) throw ContractError("FixP bounds require low < high");
    if (!(scale >= 0.0) || !std::isfinite(scale)) throw ContractError("FixP scale must be finite and >= 0");
  }

  int levels() const noexcept { return (1 << n) - 1; }
  double step() const noexcept { return (high - low) / levels(); }
  // Signed code of grid level 0; code = level + code_offset().
  int code_offset() const noexcept { return static_cast<int>(std::lround(low / step())); }

  friend bool operator==(const FixPParams&, const FixPParams&) = default;
};

inline double fixp_compute_scale(std::span<const double> w, int n) {
  if (w.empty()) throw ContractError("FixP scale of an empty tensor");
  double s = 0.0;
  for (double x : w) {
    if (!std::isfinite(x)) throw DomainError("FixP quantization: non-finite weight");
    s += std::abs(x);
  }
  const double mean_abs = s / static_cast<double>(w.size());
  return mean_abs * static_cast<double>((1 << n) - 1) / std::ldexp(1.0, n - 1);
}

// Grid level 0..2^n-1 of a normalized (already divided by scale) value.
inline int fixp_level(double normalized, const FixPParams& p) noexcept {
  const double c = std::clamp(normalized, p.low, p.high);
  return static_cast<int>(round_half_away((c - p.low) * p.levels() / (p.high - p.low)));
}

inline double fixp_level_value(int level, const FixPParams& p) noexcept {
  return level * (p.high - p.low) / p.levels() + p.low;
}

struct FixPQuantized {
  Tensor normalized;  // values on the uniform grid
  double scale = 0.0;
};

// Uses p.scale when it is positive, otherwise computes it from W.
inline FixPQuantized fixp_quantize_with_scale(const Tensor& w, const FixPParams& p, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw DomainError("FixP quantization: degenerate scale (all-zero tensor); leave this tensor unquantized");
  FixPQuantized out{Tensor(w.shape()), scale};
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!std::isfinite(w[i])) throw DomainError("FixP quantization: non-finite weight");
    out.normalized[i] = fixp_level_value(fixp_level(w[i] / scale, p), p);
  }
  return out;
}

inline FixPQuantized fixp_quantize_weights(const Tensor& w, const FixPParams& p) {
  if (w.empty()) throw ContractError("fixp_quantize_weights: empty tensor");
  p.validate();
  return fixp_quantize_with_scale(w, p, fixp_compute_scale(w.span(), p.n));
}

inline Tensor fixp_dequantize(const FixPQuantized& q) {
  Tensor out = q.normalized;
  for (double& v : out.data()) v *= q.scale;
  return out;
}

// ---------------------------------------------------------------------------
// Posit

inline Tensor posit_quantize_weights(const Tensor& w, ScaleVariant v) {
  Tensor out(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = posit_round(w[i], v);
  return out;
}

// Representable values and the midpoints between neighbours.
struct PositGrid {
  ScaleVariant variant = ScaleVariant::Unit;
  std::array<double, 15> alphas{};
  std::array<double, 14> thresholds{};

  explicit PositGrid(ScaleVariant v = ScaleVariant::Unit) : variant(v), alphas(posit_table(v)) {
    for (std::size_t i = 0; i + 1 < alphas.size(); ++i)
      thresholds[i] = 0.5 * (alphas[i] + alphas[i + 1]);
  }

  double min() const noexcept { return alphas.front(); }
  double max() const noexcept { return alphas.back(); }

  // Interval [alpha_i, alpha_{i+1}) containing x; the top value belongs to the
  // last interval. std::nullopt outside [min, max].
  std::optional<std::size_t> interval_of(double x) const noexcept {
    if (!(x >= min() && x <= max())) return std::nullopt;
    if (x == max()) return alphas.size() - 2;
    const auto it = std::upper_bound(alphas.begin(), alphas.end(), x);
    return static_cast<std::size_t>(it - alphas.begin()) - 1;
  }
};

// tanh surrogate of the Posit quantizer inside one interval:
//   S(x) = (2 / D) * tanh((5 / D) * (x - m)),  D = interval width, m = midpoint.
inline double posit_surrogate(double x, std::size_t interval, const PositGrid& grid) noexcept {
  const double a = grid.alphas[interval];
  const double b = grid.alphas[interval + 1];
  const double width = b - a;
  const double mid = 0.5 * (a + b);
  return (2.0 / width) * std::tanh((5.0 / width) * (x - mid));
}

// dS/dx = (10 / D^2) * sech^2((5 / D) * (x - m)); zero outside the table range.
inline double posit_grad(double x, const PositGrid& grid) noexcept {
  const auto iv = grid.interval_of(x);
  if (!iv) return 0.0;
  const double a = grid.alphas[*iv];
  const double b = grid.alphas[*iv + 1];
  const double width = b - a;
  const double mid = 0.5 * (a + b);
  const double sech = 1.0 / std::cosh((5.0 / width) * (x - mid));
  return (10.0 / (width * width)) * sech * sech;
}

inline Tensor posit_grad(const Tensor& x, const PositGrid& grid) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = posit_grad(x[i], grid);
  return out;
}

// ---------------------------------------------------------------------------
// STE

inline double ste_grad(double x, double low, double high) noexcept {
  return (x >= low && x <= high) ? 1.0 : 0.0;
}

inline Tensor ste_grad(const Tensor& x, double low, double high) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = ste_grad(x[i], low, high);
  return out;
}

// ---------------------------------------------------------------------------
// PACT

struct PactParams {
  double alpha = 10.0;
  int bits = 4;

  void validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ContractError("PACT alpha must be > 0");
    if (bits < 1 || bits > 8) throw ContractError("PACT bits must be in [1, 8]");
  }
  int levels() const noexcept { return (1 << bits) - 1; }
  // Real value of one activation code step.
  double step() const noexcept { return alpha / levels(); }
};

// 0.5 * (|x| - |x - alpha| + alpha) == clip(x, 0, alpha)
inline double pact_forward(double x, const PactParams& p) noexcept { return std::clamp(x, 0.0, p.alpha); }

inline Tensor pact_forward(const Tensor& x, const PactParams& p) {
  p.validate();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = pact_forward(x[i], p);
  return y;
}

inline std::uint8_t pact_code(double y, const PactParams& p) noexcept {
  const double c = round_half_away(y * p.levels() / p.alpha);
  return static_cast<std::uint8_t>(std::clamp(c, 0.0, static_cast<double>(p.levels())));
}

inline double pact_code_value(std::uint8_t code, const PactParams& p) noexcept {
  return code * p.alpha / p.levels();
}

struct PactQuantized {
  std::vector<std::uint8_t> codes;
  Tensor values;
};

inline PactQuantized pact_quantize(const Tensor& y, const PactParams& p) {
  p.validate();
  PactQuantized out{std::vector<std::uint8_t>(y.size()), Tensor(y.shape())};
  for (std::size_t i = 0; i < y.size(); ++i) {
    out.codes[i] = pact_code(y[i], p);
    out.values[i] = pact_code_value(out.codes[i], p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-layer scheme

struct PositScheme {
  ScaleVariant variant = ScaleVariant::Sc4;
  friend bool operator==(const PositScheme&, const PositScheme&) = default;
};

using QuantScheme = std::variant<FixPParams, PositScheme>;

inline bool is_posit(const QuantScheme& s) noexcept { return std::holds_alternative<PositScheme>(s); }

}  // namespace mixq
