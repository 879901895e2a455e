#pragma once
// Replays every dot product of a quantized forward pass through the integer
// MAC model and compares it with the engine's floating-point result.

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixq/macsim.hpp"

namespace mixq {

struct SkippedLayer {
  std::string layer_id;
  std::string reason;
};

struct LayerVerify {
  std::string layer_id;
  std::string path;  // "fixp" or the posit variant
  std::size_t dot_products = 0;
  std::size_t saturations = 0;
  double max_discrepancy_ulp = 0.0;  // over non-saturated dot products
};

struct MacVerifySummary {
  std::size_t samples = 0;
  std::size_t dot_products = 0;
  std::size_t saturations = 0;
  double max_discrepancy_ulp = 0.0;
  std::vector<LayerVerify> layers;
  std::vector<SkippedLayer> skipped;
  std::vector<MacRecord> trace;  // filled when requested

  bool passed() const noexcept { return max_discrepancy_ulp <= 1.0; }
};

namespace detail {

// Nearest preceding PACT layer, looking through flatten layers.
inline const Layer* feeding_pact(const Model& m, std::size_t li, std::size_t& pact_index) {
  for (std::size_t k = li; k-- > 0;) {
    if (m.layers[k].kind == LayerKind::Flatten) continue;
    if (m.layers[k].kind == LayerKind::Pact) {
      pact_index = k;
      return &m.layers[k];
    }
    return nullptr;
  }
  return nullptr;
}

inline std::vector<MacWeight> weight_codes(const Layer& l) {
  std::vector<MacWeight> out(l.weight.size());
  if (const auto* fp = std::get_if<FixPParams>(&*l.scheme)) {
    double scale = fp->scale;
    if (!(scale > 0.0)) scale = fixp_compute_scale(l.weight.span(), fp->n);
    for (std::size_t i = 0; i < l.weight.size(); ++i)
      out[i] = FixPCode{fixp_level(l.weight[i] / scale, *fp) + fp->code_offset()};
  } else {
    const auto v = std::get<PositScheme>(*l.scheme).variant;
    for (std::size_t i = 0; i < l.weight.size(); ++i) out[i] = posit_quantize(l.weight[i], v);
  }
  return out;
}

}  // namespace detail

inline MacVerifySummary mac_verify(const Model& m, const Tensor& batch, bool record_trace = false) {
  MacVerifySummary sum;
  sum.samples = batch.rank() ? batch.dim(0) : 0;
  for (const auto& l : m.layers)
    if (l.has_weights() && !l.scheme) sum.skipped.push_back({l.name, "full-precision weights"});
  if (sum.samples == 0) return sum;
  const auto res = forward(m, batch, Mode::Quantized);
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const Layer& l = m.layers[li];
    if (!l.has_weights() || !l.scheme) continue;
    std::size_t pi = 0;
    const Layer* pact = detail::feeding_pact(m, li, pi);
    if (!pact) {
      sum.skipped.push_back({l.name, "input is not a 4-bit PACT activation"});
      continue;
    }
    const auto& codes = res.cache.layers[pi].codes;
    const auto& out = res.cache.layers[li].output;
    const auto w = detail::weight_codes(l);
    DotScales sc;
    sc.act_scale = pact->pact.step();
    LayerVerify lv{l.name, "fixp", 0, 0, 0.0};
    double ulp = 0.0;
    if (const auto* fp = std::get_if<FixPParams>(&*l.scheme)) {
      sc.fixp_step = fp->step();
      sc.fixp_scale = fp->scale > 0.0 ? fp->scale : fixp_compute_scale(l.weight.span(), fp->n);
      ulp = sc.fixp_step * sc.fixp_scale * sc.act_scale;
    } else {
      sc.posit_variant = std::get<PositScheme>(*l.scheme).variant;
      lv.path = std::string(to_string(sc.posit_variant));
      ulp = std::ldexp(1.0, variant_exp_offset(sc.posit_variant) - kSubUnitBits) * sc.act_scale;
    }
    auto check = [&](std::span<const MacWeight> ws, std::span<const std::uint8_t> as, double engine) {
      const auto r = dot_product_mixed(ws, as, sc);
      ++lv.dot_products;
      if (r.saturated) {
        ++lv.saturations;
        return;
      }
      lv.max_discrepancy_ulp = std::max(lv.max_discrepancy_ulp, std::abs(r.value - engine) / ulp);
    };
    const Tensor& x = res.cache.layers[li].input;
    std::vector<MacWeight> ws;
    std::vector<std::uint8_t> as;
    if (l.kind == LayerKind::Dense) {
      const std::size_t B = x.dim(0), in = x.dim(1), outn = l.weight.dim(0);
      for (std::size_t n = 0; n < B; ++n)
        for (std::size_t o = 0; o < outn; ++o) {
          ws.assign(w.begin() + static_cast<std::ptrdiff_t>(o * in), w.begin() + static_cast<std::ptrdiff_t>((o + 1) * in));
          as.assign(codes.begin() + static_cast<std::ptrdiff_t>(n * in), codes.begin() + static_cast<std::ptrdiff_t>((n + 1) * in));
          check(ws, as, out[n * outn + o] - l.bias[o]);
          if (record_trace && n == 0)
            for (std::size_t i = 0; i < in; ++i) sum.trace.push_back({l.name, ws[i], as[i]});
        }
    } else {
      const auto g = detail::conv_geometry(x.shape(), l.weight, l.padding);
      for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < g.oc; ++o)
          for (std::size_t r = 0; r < g.oh; ++r)
            for (std::size_t c = 0; c < g.ow; ++c) {
              ws.clear();
              as.clear();
              for (std::size_t i = 0; i < g.ic; ++i)
                for (std::size_t u = 0; u < g.kh; ++u) {
                  const auto ir = static_cast<std::ptrdiff_t>(r + u) - g.pad_h;
                  if (ir < 0 || ir >= static_cast<std::ptrdiff_t>(g.h)) continue;
                  for (std::size_t v = 0; v < g.kw; ++v) {
                    const auto ic = static_cast<std::ptrdiff_t>(c + v) - g.pad_w;
                    if (ic < 0 || ic >= static_cast<std::ptrdiff_t>(g.w)) continue;
                    ws.push_back(w[((o * g.ic + i) * g.kh + u) * g.kw + v]);
                    as.push_back(codes[((n * g.ic + i) * g.h + static_cast<std::size_t>(ir)) * g.w +
                                       static_cast<std::size_t>(ic)]);
                  }
                }
              check(ws, as, out[((n * g.oc + o) * g.oh + r) * g.ow + c] - l.bias[o]);
              if (record_trace && n == 0)
                for (std::size_t i = 0; i < ws.size(); ++i) sum.trace.push_back({l.name, ws[i], as[i]});
            }
    }
    sum.dot_products += lv.dot_products;
    sum.saturations += lv.saturations;
    sum.max_discrepancy_ulp = std::max(sum.max_discrepancy_ulp, lv.max_discrepancy_ulp);
    sum.layers.push_back(std::move(lv));
  }
  return sum;
}

inline nlohmann::ordered_json to_json(const MacVerifySummary& s) {
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const auto& l : s.layers)
    layers.push_back({{"layer_id", l.layer_id},
                      {"path", l.path},
                      {"dot_products", l.dot_products},
                      {"saturations", l.saturations},
                      {"max_discrepancy_ulp", l.max_discrepancy_ulp}});
  nlohmann::ordered_json skipped = nlohmann::ordered_json::array();
  for (const auto& k : s.skipped) skipped.push_back({{"layer_id", k.layer_id}, {"reason", k.reason}});
  return {{"samples", s.samples},
          {"dot_products", s.dot_products},
          {"saturations", s.saturations},
          {"max_discrepancy_ulp", s.max_discrepancy_ulp},
          {"max_discrepancy_subunits", std::llround(s.max_discrepancy_ulp)},
          {"passed", s.passed()},
          {"layers", layers},
          {"skipped", skipped}};
}

}  // namespace mixq
