#pragma once
// Four-way comparison on one model: full precision, all-FixP4, all-Posit4 and
// the sensitivity-guided mix, each quantized model retrained with QAT.

#include <string>
#include <vector>

#include "json.hpp"
#include "mixq/config.hpp"
#include "mixq/sensitivity.hpp"
#include "mixq/train.hpp"

namespace mixq {

struct TableRow {
  std::uint64_t seed = 0;
  double fp32 = 0.0;
  double fixp4 = 0.0;
  double posit4 = 0.0;
  double mixed = 0.0;
  AssignmentPlan plan;                  // mixed assignment
  std::size_t last_admitted_params = 0;  // size of the last layer admitted to Posit
  std::vector<LayerStats> stats;

  bool budget_ok() const noexcept {
    return static_cast<double>(plan.posit_param_count - last_admitted_params) <=
           plan.eta * static_cast<double>(plan.total_param_count);
  }
};

inline AssignmentPlan all_fixp_plan(const std::vector<LayerStats>& stats, double eta) {
  AssignmentPlan p;
  p.eta = eta;
  for (const auto& s : stats) {
    p.fixp_layers.push_back(s.layer_id);
    p.total_param_count += s.n_l;
  }
  return p;
}

inline AssignmentPlan all_posit_plan(const std::vector<LayerStats>& stats, double eta) {
  AssignmentPlan p;
  p.eta = eta;
  for (const auto& s : stats) {
    p.posit_layers.emplace_back(s.layer_id, s.best_variant());
    p.total_param_count += s.n_l;
  }
  p.posit_param_count = p.total_param_count;
  return p;
}

inline Model retrain_with_plan(const Model& fp32, const AssignmentPlan& plan, const Dataset& train_set,
                               const RunConfig& cfg, std::uint64_t seed) {
  Model m = fp32;
  apply_plan(m, plan, cfg.fixp(), cfg.quantize_first_last, cfg.pact_alpha);
  TrainConfig t = cfg.retrain;
  t.seed = seed;
  t.mode = Mode::Quantized;
  train(m, train_set, nullptr, t);
  return m;
}

// fp32 must be a trained full-precision model.
inline TableRow run_table_row(const Model& fp32, const Split& data, const RunConfig& cfg, std::uint64_t seed) {
  TableRow row;
  row.seed = seed;
  row.fp32 = evaluate(fp32, data.test, Mode::Fp32);
  const auto grads = mean_gradient(fp32, data.train, Mode::Fp32, cfg.train.batch_size, cfg.calib_batches);
  row.stats = compute_all_sensitivities(fp32, grads, cfg.fixp(), cfg.quantize_first_last);
  row.plan = select_layers(row.stats, cfg.eta, cfg.skip_nonpositive);
  if (!row.plan.posit_layers.empty()) {
    const auto& last = row.plan.posit_layers.back().first;
    for (const auto& s : row.stats)
      if (s.layer_id == last) row.last_admitted_params = s.n_l;
  }
  auto eval_q = [&](const AssignmentPlan& p) {
    return evaluate(retrain_with_plan(fp32, p, data.train, cfg, seed), data.test, Mode::Quantized);
  };
  row.fixp4 = eval_q(all_fixp_plan(row.stats, cfg.eta));
  row.posit4 = eval_q(all_posit_plan(row.stats, cfg.eta));
  // With no Posit layer admitted the mix is the all-FixP model.
  row.mixed = row.plan.posit_layers.empty() ? row.fixp4 : eval_q(row.plan);
  return row;
}

// Trains the full-precision model from scratch and runs the comparison.
inline TableRow run_pipeline(const Split& data, const RunConfig& cfg, std::uint64_t seed) {
  Model m = make_mlp(data.train.sample_volume(), cfg.hidden, data.train.num_classes, seed);
  TrainConfig t = cfg.train;
  t.seed = seed;
  t.mode = Mode::Fp32;
  train(m, data.train, nullptr, t);
  return run_table_row(m, data, cfg, seed);
}

inline nlohmann::ordered_json to_json(const TableRow& r) {
  nlohmann::ordered_json posit = nlohmann::ordered_json::array();
  for (const auto& [id, v] : r.plan.posit_layers) posit.push_back({{"layer_id", id}, {"variant", to_string(v)}});
  nlohmann::ordered_json s = nlohmann::ordered_json::array();
  for (const auto& st : r.stats)
    s.push_back({{"layer_id", st.layer_id}, {"n_l", st.n_l}, {"s_sc4", st.s_sc4}, {"s_sc8", st.s_sc8}, {"s_l", st.s_l}});
  return {{"seed", r.seed},
          {"fp32", r.fp32},
          {"fixp4", r.fixp4},
          {"posit4", r.posit4},
          {"mixed", r.mixed},
          {"mixed_posit_layers", posit},
          {"mixed_posit_param_count", r.plan.posit_param_count},
          {"total_param_count", r.plan.total_param_count},
          {"mixed_posit_param_fraction", r.plan.posit_param_fraction()},
          {"budget_ok", r.budget_ok()},
          {"sensitivities", s}};
}

struct TableSummary {
  double fp32 = 0, fixp4 = 0, posit4 = 0, mixed = 0;
};

inline TableSummary mean_of(const std::vector<TableRow>& rows) {
  TableSummary s;
  if (rows.empty()) return s;
  for (const auto& r : rows) {
    s.fp32 += r.fp32;
    s.fixp4 += r.fixp4;
    s.posit4 += r.posit4;
    s.mixed += r.mixed;
  }
  const double n = static_cast<double>(rows.size());
  s.fp32 /= n;
  s.fixp4 /= n;
  s.posit4 /= n;
  s.mixed /= n;
  return s;
}

inline nlohmann::ordered_json table_json(const std::vector<TableRow>& rows, const RunConfig& cfg) {
  nlohmann::ordered_json rj = nlohmann::ordered_json::array();
  for (const auto& r : rows) rj.push_back(to_json(r));
  const auto m = mean_of(rows);
  return {{"eta", cfg.eta},
          {"skip_nonpositive", cfg.skip_nonpositive},
          {"quantize_first_last", cfg.quantize_first_last},
          {"rows", rj},
          {"mean", {{"fp32", m.fp32}, {"fixp4", m.fixp4}, {"posit4", m.posit4}, {"mixed", m.mixed}}}};
}

inline std::string table_csv(const std::vector<TableRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "seed,fp32,fixp4,posit4,mixed,mixed_posit_param_fraction\n";
  for (const auto& r : rows)
    os << r.seed << ',' << r.fp32 << ',' << r.fixp4 << ',' << r.posit4 << ',' << r.mixed << ','
       << r.plan.posit_param_fraction() << '\n';
  return os.str();
}

}  // namespace mixq
