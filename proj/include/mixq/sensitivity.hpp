#pragma once
// Per-layer compound sensitivity and greedy Posit layer assignment under a
// parameter budget eta.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixq/nn.hpp"

namespace mixq {

inline double compound_sensitivity(double fixp_err, double posit_err, double grad_norm, std::size_t n) {
  if (n == 0) throw ContractError("sensitivity of an empty layer");
  return (fixp_err - posit_err) * grad_norm / static_cast<double>(n);
}

// (||Q_fixp(w) - w|| - ||Q_posit(w) - w||) * ||grad|| / n, L2 norms over the
// flattened tensor, both quantizers in real weight units.
inline double layer_sensitivity(const Tensor& w, const Tensor& grad, ScaleVariant variant, const FixPParams& fixp) {
  if (w.size() != grad.size())
    throw ContractError("layer_sensitivity: weight and gradient lengths differ (" + std::to_string(w.size()) + " vs " +
                        std::to_string(grad.size()) + ")");
  if (w.empty()) throw ContractError("layer_sensitivity: empty layer");
  fixp.validate();
  const double scale = fixp_compute_scale(w.span(), fixp.n);
  // An all-zero tensor is represented exactly by both systems.
  const double e_fixp = scale > 0.0 ? l2_distance(fixp_dequantize(fixp_quantize_with_scale(w, fixp, scale)).span(), w.span())
                                    : 0.0;
  const double e_posit = l2_distance(posit_quantize_weights(w, variant).span(), w.span());
  return compound_sensitivity(e_fixp, e_posit, l2_norm(grad.span()), w.size());
}

// Scaled variant with the smaller L2 quantization error (Sc8 on a tie); the
// same choice as the sensitivity argmax whenever the gradient is nonzero.
inline ScaleVariant lowest_error_variant(const Tensor& w) {
  const double e4 = l2_distance(posit_quantize_weights(w, ScaleVariant::Sc4).span(), w.span());
  const double e8 = l2_distance(posit_quantize_weights(w, ScaleVariant::Sc8).span(), w.span());
  return e4 < e8 ? ScaleVariant::Sc4 : ScaleVariant::Sc8;
}

struct LayerStats {
  std::string layer_id;
  std::size_t index = 0;  // position in the model's layer list
  std::size_t n_l = 0;
  Tensor w;
  Tensor grad;
  double s_sc4 = 0.0;
  double s_sc8 = 0.0;
  double s_l = 0.0;

  // Argmax over the two scaled variants; Sc8 on an exact tie.
  ScaleVariant best_variant() const noexcept { return s_sc4 > s_sc8 ? ScaleVariant::Sc4 : ScaleVariant::Sc8; }
};

inline LayerStats make_layer_stats(std::string id, std::size_t index, const Tensor& w, const Tensor& grad,
                                   const FixPParams& fixp) {
  LayerStats st;
  st.layer_id = std::move(id);
  st.index = index;
  st.n_l = w.size();
  st.w = w;
  st.grad = grad;
  st.s_sc4 = layer_sensitivity(w, grad, ScaleVariant::Sc4, fixp);
  st.s_sc8 = layer_sensitivity(w, grad, ScaleVariant::Sc8, fixp);
  st.s_l = std::max(st.s_sc4, st.s_sc8);
  return st;
}

inline std::vector<LayerStats> compute_all_sensitivities(const Model& m, const Gradients& g,
                                                         const FixPParams& fixp = {},
                                                         bool quantize_first_last = true) {
  std::vector<LayerStats> out;
  for (std::size_t li : quantizable_layers(m, quantize_first_last)) {
    const Layer& l = m.layers[li];
    if (li >= g.layers.size() || g.layers[li].weight.shape() != l.weight.shape())
      throw ContractError("no gradient for layer '" + l.name + "'");
    out.push_back(make_layer_stats(l.name, li, l.weight, g.layers[li].weight, fixp));
  }
  return out;
}

struct AssignmentPlan {
  double eta = 0.1;
  std::vector<std::pair<std::string, ScaleVariant>> posit_layers;  // admission order
  std::vector<std::string> fixp_layers;                             // model order
  std::size_t posit_param_count = 0;
  std::size_t total_param_count = 0;

  double posit_param_fraction() const noexcept {
    return total_param_count ? static_cast<double>(posit_param_count) / static_cast<double>(total_param_count) : 0.0;
  }
  bool is_posit(std::string_view id) const noexcept {
    return std::any_of(posit_layers.begin(), posit_layers.end(), [&](const auto& p) { return p.first == id; });
  }
};

// Layers in descending s_l order, ties by ascending position.
inline std::vector<std::size_t> sensitivity_order(const std::vector<LayerStats>& stats) {
  std::vector<std::size_t> order(stats.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return stats[a].s_l > stats[b].s_l; });
  return order;
}

// Do-while admission: the top candidate always enters, and admission
// continues while the running Posit parameter count is <= eta * N.
inline AssignmentPlan select_layers(const std::vector<LayerStats>& stats, double eta, bool skip_nonpositive = true) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ContractError("eta must be in [0, 1]");
  AssignmentPlan plan;
  plan.eta = eta;
  for (const auto& s : stats) plan.total_param_count += s.n_l;
  std::vector<std::size_t> candidates;
  for (std::size_t i : sensitivity_order(stats))
    if (!skip_nonpositive || stats[i].s_l > 0.0) candidates.push_back(i);
  const double budget = eta * static_cast<double>(plan.total_param_count);
  std::vector<bool> chosen(stats.size(), false);
  std::size_t k = 0;
  if (!candidates.empty()) {
    do {
      const LayerStats& s = stats[candidates[k++]];
      plan.posit_layers.emplace_back(s.layer_id, s.best_variant());
      plan.posit_param_count += s.n_l;
      chosen[static_cast<std::size_t>(&s - stats.data())] = true;
    } while (k < candidates.size() && static_cast<double>(plan.posit_param_count) <= budget);
  }
  for (std::size_t i = 0; i < stats.size(); ++i)
    if (!chosen[i]) plan.fixp_layers.push_back(stats[i].layer_id);
  return plan;
}

// Attaches Posit schemes to planned layers and FixP to every other
// quantizable layer.
inline void apply_plan(Model& m, const AssignmentPlan& plan, const FixPParams& fixp = {},
                       bool quantize_first_last = true, double pact_alpha_init = 10.0, int act_bits = 4) {
  std::vector<std::pair<std::string, QuantScheme>> schemes;
  for (std::size_t li : quantizable_layers(m, quantize_first_last)) {
    const std::string& name = m.layers[li].name;
    const auto it = std::find_if(plan.posit_layers.begin(), plan.posit_layers.end(),
                                 [&](const auto& p) { return p.first == name; });
    if (it != plan.posit_layers.end())
      schemes.emplace_back(name, PositScheme{it->second});
    else
      schemes.emplace_back(name, fixp);
  }
  for (const auto& [name, v] : plan.posit_layers) {
    const auto& q = quantizable_layers(m, quantize_first_last);
    if (std::none_of(q.begin(), q.end(), [&](std::size_t li) { return m.layers[li].name == name; }))
      throw DataError("plan names layer '" + name + "' which is not a quantizable layer of the model");
  }
  attach_schemes(m, schemes, pact_alpha_init, act_bits);
  refresh_fixp_scales(m);
}

// ---------------------------------------------------------------------------
// Report

struct SensitivityReport {
  std::vector<LayerStats> stats;
  AssignmentPlan plan;
  bool skip_nonpositive = true;
  bool quantize_first_last = true;
};

inline nlohmann::ordered_json to_json(const SensitivityReport& r) {
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const auto& s : r.stats) {
    const auto it = std::find_if(r.plan.posit_layers.begin(), r.plan.posit_layers.end(),
                                 [&](const auto& p) { return p.first == s.layer_id; });
    const bool chosen = it != r.plan.posit_layers.end();
    layers.push_back({{"layer_id", s.layer_id},
                      {"n_l", s.n_l},
                      {"s_sc4", s.s_sc4},
                      {"s_sc8", s.s_sc8},
                      {"s_l", s.s_l},
                      {"chosen", chosen},
                      {"variant", chosen ? nlohmann::ordered_json(std::string(to_string(it->second))) : nullptr}});
  }
  nlohmann::ordered_json posit = nlohmann::ordered_json::array();
  for (const auto& [id, v] : r.plan.posit_layers) posit.push_back({{"layer_id", id}, {"variant", to_string(v)}});
  return {{"eta", r.plan.eta},
          {"N", r.plan.total_param_count},
          {"posit_param_count", r.plan.posit_param_count},
          {"posit_param_fraction", r.plan.posit_param_fraction()},
          {"skip_nonpositive", r.skip_nonpositive},
          {"quantize_first_last", r.quantize_first_last},
          {"layers", layers},
          {"posit_layers", posit},
          {"fixp_layers", r.plan.fixp_layers}};
}

// Reads back the plan part of a report.
inline AssignmentPlan plan_from_json(const nlohmann::json& j) {
  try {
    AssignmentPlan p;
    p.eta = j.at("eta").get<double>();
    p.total_param_count = j.at("N").get<std::size_t>();
    p.posit_param_count = j.at("posit_param_count").get<std::size_t>();
    for (const auto& e : j.at("posit_layers"))
      p.posit_layers.emplace_back(e.at("layer_id").get<std::string>(), parse_variant(e.at("variant").get<std::string>()));
    p.fixp_layers = j.at("fixp_layers").get<std::vector<std::string>>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed sensitivity report: ") + e.what());
  }
}

}  // namespace mixq
