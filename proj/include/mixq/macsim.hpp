#pragma once
// Integer model of the combined Posit/FixP MAC unit and the energy-overhead
// model.
//
// Posit path: weight is a signed power of two, so w * a is a shift of the
// 4-bit activation code. The product lands in a 24-bit accumulator whose LSB
// weighs 2^-4 (the smallest unscaled Posit4 magnitude). Sc4/Sc8 shift the
// binary point of the whole sum and are applied at readout.
//
// FixP path: 4-bit signed weight code times 4-bit activation code, 8-bit
// product, 18-bit accumulator.

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "mixq/nn.hpp"
#include "mixq/posit.hpp"

namespace mixq {

inline constexpr int kPositAccWidth = 24;
inline constexpr int kFixPAccWidth = 18;
inline constexpr int kPositProductWidth = 14;
inline constexpr int kSubUnitBits = 4;

struct MacAccumulator {
  std::int64_t value = 0;
  int width = kPositAccWidth;
  bool saturated = false;

  static MacAccumulator posit() { return {0, kPositAccWidth, false}; }
  static MacAccumulator fixp() { return {0, kFixPAccWidth, false}; }

  std::int64_t max() const noexcept { return (std::int64_t{1} << (width - 1)) - 1; }
  std::int64_t min() const noexcept { return -(std::int64_t{1} << (width - 1)); }

  // Saturating add; the flag is sticky.
  MacAccumulator add(std::int64_t p) const noexcept {
    MacAccumulator r = *this;
    const std::int64_t v = value + p;
    if (v > max()) {
      r.value = max();
      r.saturated = true;
    } else if (v < min()) {
      r.value = min();
      r.saturated = true;
    } else {
      r.value = v;
    }
    return r;
  }

  friend bool operator==(const MacAccumulator&, const MacAccumulator&) = default;
};

// Product of a Posit weight and an activation code in 2^-4 sub-units of the
// unscaled format.
inline std::int64_t posit_product(Posit4Code w, std::uint8_t a) {
  if (a > 15) throw ContractError("activation code must fit 4 unsigned bits");
  const RawDecode d = posit_decode_raw(w);
  if (d.kind == RawKind::NaR) throw DomainError("MAC operand is NaR");
  if (d.kind == RawKind::Zero) return 0;
  const int shift = d.raw.unit_exp(w.variant) + kSubUnitBits;  // 0..8
  const std::int64_t mag = std::int64_t{a} << shift;
  if (mag >= (std::int64_t{1} << (kPositProductWidth - 1)))
    throw ContractError("posit product exceeds its 14-bit field");
  return d.raw.sign < 0 ? -mag : mag;  // two's-complement negation in the sign-set stage
}

inline MacAccumulator mac_posit_fixp(Posit4Code w, std::uint8_t a, const MacAccumulator& acc) {
  if (acc.width != kPositAccWidth) throw ContractError("posit MAC needs a 24-bit accumulator");
  return acc.add(posit_product(w, a));
}

inline std::int64_t fixp_product(int w, std::uint8_t a) {
  if (w < -8 || w > 7) throw ContractError("FixP weight code must fit 4 signed bits");
  if (a > 15) throw ContractError("activation code must fit 4 unsigned bits");
  return std::int64_t{w} * a;
}

inline MacAccumulator mac_fixp_fixp(int w, std::uint8_t a, const MacAccumulator& acc) {
  if (acc.width != kFixPAccWidth) throw ContractError("FixP MAC needs an 18-bit accumulator");
  return acc.add(fixp_product(w, a));
}

// ---------------------------------------------------------------------------
// Combined unit

struct FixPCode {
  int value = 0;  // signed level code, -8..7
  friend bool operator==(const FixPCode&, const FixPCode&) = default;
};

using MacWeight = std::variant<Posit4Code, FixPCode>;

// Readout scales: FixP code unit is fixp_step * fixp_scale, activation code
// unit is act_scale (alpha / 15 for PACT).
struct DotScales {
  ScaleVariant posit_variant = ScaleVariant::Unit;
  double fixp_step = 0.25;
  double fixp_scale = 1.0;
  double act_scale = 1.0;
};

struct DotResult {
  double value = 0.0;
  MacAccumulator posit_acc = MacAccumulator::posit();
  MacAccumulator fixp_acc = MacAccumulator::fixp();
  bool saturated = false;
  std::string diagnostic;
};

inline double dot_readout(std::int64_t posit_acc, std::int64_t fixp_acc, const DotScales& s) {
  const double posit_part =
      std::ldexp(static_cast<double>(posit_acc), variant_exp_offset(s.posit_variant) - kSubUnitBits);
  const double fixp_part = static_cast<double>(fixp_acc) * s.fixp_step * s.fixp_scale;
  return (posit_part + fixp_part) * s.act_scale;
}

inline DotResult dot_product_mixed(std::span<const MacWeight> w, std::span<const std::uint8_t> a, const DotScales& s) {
  if (w.size() != a.size()) throw ContractError("dot_product_mixed: operand lengths differ");
  DotResult r;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (const auto* pc = std::get_if<Posit4Code>(&w[i])) {
      if (pc->variant != s.posit_variant)
        throw ContractError("dot_product_mixed: posit operand variant differs from the unit's readout variant");
      r.posit_acc = mac_posit_fixp(*pc, a[i], r.posit_acc);
    } else {
      r.fixp_acc = mac_fixp_fixp(std::get<FixPCode>(w[i]).value, a[i], r.fixp_acc);
    }
  }
  r.saturated = r.posit_acc.saturated || r.fixp_acc.saturated;
  if (r.saturated)
    r.diagnostic = std::string("accumulator saturated (") + (r.posit_acc.saturated ? "posit 24-bit" : "fixp 18-bit") +
                   " path)";
  r.value = dot_readout(r.posit_acc.value, r.fixp_acc.value, s);
  return r;
}

// ---------------------------------------------------------------------------
// Energy

struct EnergyModel {
  double posit_mac_overhead = 0.30;
  double compute_share = 0.10;
  double e_fixp_mac = 1.0;

  void validate() const {
    if (!(compute_share >= 0.0 && compute_share <= 1.0)) throw UsageError("compute share must be in [0, 1]");
    if (!(posit_mac_overhead >= 0.0)) throw UsageError("posit MAC overhead must be >= 0");
    if (!(e_fixp_mac > 0.0)) throw UsageError("FixP MAC energy must be > 0");
  }
};

// System energy overhead (fraction) for a given Posit MAC fraction.
inline double energy_overhead(double posit_fraction, const EnergyModel& em = {}) {
  em.validate();
  if (!(posit_fraction >= 0.0 && posit_fraction <= 1.0)) throw ContractError("posit MAC fraction must be in [0, 1]");
  return posit_fraction * em.posit_mac_overhead * em.compute_share;
}

struct LayerMacs {
  std::string layer_id;
  std::uint64_t total_macs = 0;
  std::uint64_t posit_macs = 0;
  friend bool operator==(const LayerMacs&, const LayerMacs&) = default;
};

struct MacTrace {
  std::vector<LayerMacs> layers;

  std::uint64_t total_macs() const noexcept {
    std::uint64_t n = 0;
    for (const auto& l : layers) n += l.total_macs;
    return n;
  }
  std::uint64_t posit_macs() const noexcept {
    std::uint64_t n = 0;
    for (const auto& l : layers) n += l.posit_macs;
    return n;
  }
  void validate() const {
    for (const auto& l : layers)
      if (l.posit_macs > l.total_macs) throw ContractError("trace layer '" + l.layer_id + "' has posit ops > total ops");
  }
};

// Per-sample MAC counts: dense in*out, conv output elements * kernel volume.
inline MacTrace count_macs(const Model& m) {
  MacTrace t;
  Shape s = m.input_shape;
  for (const auto& l : m.layers) {
    if (l.kind == LayerKind::Dense) {
      const std::uint64_t macs = l.weight.size();
      t.layers.push_back({l.name, macs, (l.scheme && is_posit(*l.scheme)) ? macs : 0});
      s = {l.weight.dim(0)};
    } else if (l.kind == LayerKind::Conv2d) {
      Shape xs = s;
      xs.insert(xs.begin(), 1);
      const auto g = detail::conv_geometry(xs, l.weight, l.padding);
      const std::uint64_t macs = g.oc * g.oh * g.ow * g.ic * g.kh * g.kw;
      t.layers.push_back({l.name, macs, (l.scheme && is_posit(*l.scheme)) ? macs : 0});
      s = {g.oc, g.oh, g.ow};
    } else if (l.kind == LayerKind::Flatten) {
      s = {shape_volume(s)};
    }
  }
  return t;
}

struct EnergyReport {
  std::vector<LayerMacs> per_layer;
  double posit_mac_fraction = 0.0;
  double overhead = 0.0;  // fraction of total system energy
  double overhead_pct() const noexcept { return overhead * 100.0; }
};

inline EnergyReport energy_report(const MacTrace& trace, const EnergyModel& em = {}) {
  trace.validate();
  const std::uint64_t total = trace.total_macs();
  if (total == 0) throw DataError("energy report: trace has no MAC operations");
  EnergyReport r;
  r.per_layer = trace.layers;
  r.posit_mac_fraction = static_cast<double>(trace.posit_macs()) / static_cast<double>(total);
  r.overhead = energy_overhead(r.posit_mac_fraction, em);
  return r;
}

inline nlohmann::ordered_json to_json(const EnergyReport& r) {
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (const auto& l : r.per_layer)
    per.push_back({{"layer_id", l.layer_id}, {"total_macs", l.total_macs}, {"posit_macs", l.posit_macs}});
  return {{"per_layer", per}, {"posit_mac_fraction", r.posit_mac_fraction}, {"overhead_pct", r.overhead_pct()}};
}

// ---------------------------------------------------------------------------
// Trace records: "layer_id,w_code,variant,a_code" per line. Posit weights
// carry their 4-bit pattern and variant; FixP weights their signed code and
// the variant field "fixp".

struct MacRecord {
  std::string layer_id;
  MacWeight weight;
  std::uint8_t act = 0;
  friend bool operator==(const MacRecord&, const MacRecord&) = default;
};

inline void write_trace(std::ostream& os, const std::vector<MacRecord>& recs) {
  for (const auto& r : recs) {
    os << r.layer_id << ',';
    if (const auto* pc = std::get_if<Posit4Code>(&r.weight))
      os << int(pc->bits) << ',' << to_string(pc->variant);
    else
      os << std::get<FixPCode>(r.weight).value << ",fixp";
    os << ',' << int(r.act) << '\n';
  }
}

inline std::vector<MacRecord> read_trace(std::istream& is) {
  std::vector<MacRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, wc, var, ac;
    if (!std::getline(ss, id, ',') || !std::getline(ss, wc, ',') || !std::getline(ss, var, ',') ||
        !std::getline(ss, ac))
      throw DataError("trace line " + std::to_string(lineno) + " needs 4 fields");
    try {
      const int w = std::stoi(wc), a = std::stoi(ac);
      if (a < 0 || a > 15) throw DataError("activation code out of range");
      MacRecord r{id, FixPCode{w}, static_cast<std::uint8_t>(a)};
      if (var == "fixp") {
        if (w < -8 || w > 7) throw DataError("FixP code out of range");
      } else {
        if (w < 0 || w > 15) throw DataError("posit code out of range");
        r.weight = Posit4Code(static_cast<std::uint8_t>(w), parse_variant(var));
      }
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw DataError("trace line " + std::to_string(lineno) + " has a non-integer field");
    } catch (const DataError& e) {
      throw DataError("trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// Replays records through per-layer accumulators (posit and FixP kept apart,
// one posit accumulator per variant).
struct ReplayTotals {
  std::map<std::string, std::map<std::string, MacAccumulator>> acc;  // layer -> path -> acc
};

inline ReplayTotals replay_trace(const std::vector<MacRecord>& recs) {
  ReplayTotals t;
  for (const auto& r : recs) {
    auto& layer = t.acc[r.layer_id];
    if (const auto* pc = std::get_if<Posit4Code>(&r.weight)) {
      auto [it, _] = layer.try_emplace(std::string(to_string(pc->variant)), MacAccumulator::posit());
      it->second = mac_posit_fixp(*pc, r.act, it->second);
    } else {
      auto [it, _] = layer.try_emplace("fixp", MacAccumulator::fixp());
      it->second = mac_fixp_fixp(std::get<FixPCode>(r.weight).value, r.act, it->second);
    }
  }
  return t;
}

}  // namespace mixq
