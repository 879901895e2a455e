#pragma once
// Command-line front end. run_cli() returns the process exit code:
// 0 success, 1 usage, 2 data error, 3 verification failure.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mixq/config.hpp"
#include "mixq/experiment.hpp"
#include "mixq/macverify.hpp"
#include "mixq/model_io.hpp"

namespace mixq {

namespace cli_detail {

struct Flags {
  std::string model, dataset, config, out, report, all, trace;
  std::optional<std::uint64_t> seed;
  std::optional<double> eta;
  std::optional<int> epochs, retrain_epochs;
  std::optional<std::size_t> batch_size, calib_batches;
  std::optional<double> lr_max, lr_min, weight_decay, pact_alpha, test_fraction;
  std::optional<std::string> fixp_estimator, posit_estimator;
  std::optional<bool> skip_nonpositive, quantize_first_last;
  std::vector<std::size_t> hidden;
  std::vector<std::uint64_t> table_seeds;
  bool table_row = false;
  std::size_t batch = 64;
};

inline void add_run_options(CLI::App* sub, Flags& f) {
  sub->add_option("--model", f.model, "Model manifest (.json, with a .bin sidecar)");
  sub->add_option("--dataset", f.dataset, "synthetic | <file.csv> | idx:<images>,<labels>");
  sub->add_option("--config", f.config, "Run configuration JSON; flags override it");
  sub->add_option("--seed", f.seed, "Seed for data generation, split, init and shuffling");
  sub->add_option("--eta", f.eta, "Posit parameter budget fraction")->check(CLI::Range(0.0, 1.0));
  sub->add_option("--out", f.out, "Output path");
  sub->add_option("--epochs", f.epochs, "Full-precision training epochs");
  sub->add_option("--retrain-epochs", f.retrain_epochs, "Quantization-aware retraining epochs");
  sub->add_option("--batch-size", f.batch_size, "Mini-batch size");
  sub->add_option("--lr-max", f.lr_max, "Peak learning rate");
  sub->add_option("--lr-min", f.lr_min, "Final learning rate");
  sub->add_option("--weight-decay", f.weight_decay, "L2 weight decay");
  sub->add_option("--fixp-estimator", f.fixp_estimator, "ste | tanh");
  sub->add_option("--posit-estimator", f.posit_estimator, "tanh | ste");
  sub->add_option("--pact-alpha", f.pact_alpha, "Initial PACT clipping level");
  sub->add_option("--calib-batches", f.calib_batches, "Batches used for sensitivity gradients (0 = all)");
  sub->add_option("--test-fraction", f.test_fraction, "Held-out fraction of the dataset");
  sub->add_option("--hidden", f.hidden, "Hidden layer widths of a freshly built MLP")->delimiter(',');
  sub->add_option("--table-seeds", f.table_seeds, "Seeds for eval --table-row")->delimiter(',');
  sub->add_flag("--skip-nonpositive,!--no-skip-nonpositive", f.skip_nonpositive,
                "Keep layers with s <= 0 out of Posit (default on)");
  sub->add_flag("--quantize-first-last,!--no-quantize-first-last", f.quantize_first_last,
                "Quantize the first and last weight layers (default on)");
}

inline RunConfig resolve_config(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.eta) c.eta = *f.eta;
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.retrain_epochs) c.retrain.epochs = *f.retrain_epochs;
  if (f.batch_size) c.train.batch_size = c.retrain.batch_size = *f.batch_size;
  if (f.lr_max) c.train.lr_max = *f.lr_max;
  if (f.lr_min) c.train.lr_min = *f.lr_min;
  if (f.weight_decay) c.train.weight_decay = c.retrain.weight_decay = *f.weight_decay;
  if (f.fixp_estimator) c.train.fixp_estimator = c.retrain.fixp_estimator = parse_estimator(*f.fixp_estimator);
  if (f.posit_estimator) c.train.posit_estimator = c.retrain.posit_estimator = parse_estimator(*f.posit_estimator);
  if (f.pact_alpha) c.pact_alpha = *f.pact_alpha;
  if (f.calib_batches) c.calib_batches = *f.calib_batches;
  if (f.test_fraction) c.test_fraction = *f.test_fraction;
  if (!f.hidden.empty()) c.hidden = f.hidden;
  if (!f.table_seeds.empty()) c.table_seeds = f.table_seeds;
  if (f.skip_nonpositive) c.skip_nonpositive = *f.skip_nonpositive;
  if (f.quantize_first_last) c.quantize_first_last = *f.quantize_first_last;
  c.validate();
  return c;
}

inline void require(const std::string& v, const char* flag) {
  if (v.empty()) throw UsageError(std::string(flag) + " is required");
}

inline bool is_quantized(const Model& m) {
  for (const auto& l : m.layers)
    if (l.scheme || l.kind == LayerKind::Pact) return true;
  return false;
}

// JSON to --out, or to stdout when no path was given.
inline void emit(const std::string& out_path, const std::string& text, std::ostream& out) {
  if (out_path.empty())
    out << text;
  else
    atomic_write(out_path, text);
}

inline std::filesystem::path sibling(const std::string& path, const std::string& suffix) {
  std::filesystem::path p(path);
  return p.parent_path() / (p.stem().string() + suffix);
}

inline std::string fmt_pct(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << 100.0 * v << "%";
  return os.str();
}

inline int cmd_train(const Flags& f, std::ostream& out) {
  require(f.dataset, "--dataset");
  require(f.out, "--out");
  const RunConfig c = resolve_config(f);
  const Split data = load_dataset(f.dataset, c);
  Model m = f.model.empty() ? make_mlp(data.train.sample_volume(), c.hidden, data.train.num_classes, c.seed)
                            : load_model(f.model);
  const bool quantized = is_quantized(m);
  TrainConfig t = quantized ? c.retrain : c.train;
  t.seed = c.seed;
  t.mode = quantized ? Mode::Quantized : Mode::Fp32;
  const auto hist = train(m, data.train, &data.test, t);
  round_to_storage(m);
  m.provenance["trained_on"] = f.dataset;
  m.provenance["train_mode"] = quantized ? "quantized" : "fp32";
  m.provenance["train_epochs"] = std::to_string(t.epochs);
  m.provenance["seed"] = std::to_string(c.seed);

  std::ostringstream csv;
  csv.precision(17);
  csv << "epoch,lr,train_loss,train_acc,val_acc\n";
  for (const auto& e : hist.epochs)
    csv << e.epoch << ',' << e.lr << ',' << e.train_loss << ',' << e.train_acc << ',' << e.val_acc << '\n';
  const double test_acc = evaluate(m, data.test, t.mode);
  nlohmann::ordered_json summary{{"mode", quantized ? "quantized" : "fp32"},
                                 {"epochs", t.epochs},
                                 {"seed", c.seed},
                                 {"final_train_loss", hist.epochs.back().train_loss},
                                 {"final_train_acc", hist.epochs.back().train_acc},
                                 {"test_accuracy", test_acc},
                                 {"params", m.weight_count()}};
  save_model(m, f.out);
  atomic_write(sibling(f.out, ".metrics.csv"), csv.str());
  atomic_write(sibling(f.out, ".summary.json"), dump_json(summary));
  out << "trained " << (quantized ? "quantized" : "fp32") << " model: test accuracy " << fmt_pct(test_acc) << "\n";
  return 0;
}

inline int cmd_analyze(const Flags& f, std::ostream& out) {
  require(f.model, "--model");
  require(f.dataset, "--dataset");
  const RunConfig c = resolve_config(f);
  const Model m = load_model(f.model);
  if (is_quantized(m)) throw DataError("analyze expects a full-precision model");
  const Split data = load_dataset(f.dataset, c);
  const auto g = mean_gradient(m, data.train, Mode::Fp32, c.train.batch_size, c.calib_batches);
  SensitivityReport r;
  r.stats = compute_all_sensitivities(m, g, c.fixp(), c.quantize_first_last);
  r.plan = select_layers(r.stats, c.eta, c.skip_nonpositive);
  r.skip_nonpositive = c.skip_nonpositive;
  r.quantize_first_last = c.quantize_first_last;
  emit(f.out, dump_json(to_json(r)), out);
  return 0;
}

inline int cmd_quantize(const Flags& f, std::ostream& out) {
  require(f.model, "--model");
  require(f.out, "--out");
  if (f.report.empty() == f.all.empty()) throw UsageError("quantize needs exactly one of --report or --all");
  const RunConfig c = resolve_config(f);
  Model m = load_model(f.model);
  if (is_quantized(m)) throw DataError("quantize expects a full-precision model");
  AssignmentPlan plan;
  plan.eta = c.eta;
  if (!f.report.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(f.report));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("report '" + f.report + "' is not valid JSON: " + e.what());
    }
    plan = plan_from_json(j);
    for (const auto& id : plan.fixp_layers) (void)m.layer(id);
  } else if (f.all == "posit") {
    for (std::size_t li : quantizable_layers(m, c.quantize_first_last))
      plan.posit_layers.emplace_back(m.layers[li].name, lowest_error_variant(m.layers[li].weight));
  } else if (f.all != "fixp") {
    throw UsageError("--all takes fixp or posit");
  }
  try {
    apply_plan(m, plan, c.fixp(), c.quantize_first_last, c.pact_alpha);
  } catch (const ContractError& e) {
    throw DataError(std::string("report does not match the model: ") + e.what());
  }
  snap_weights(m);
  m.provenance["quantized_from"] = std::filesystem::path(f.model).filename().string();
  m.provenance["plan"] = f.report.empty() ? "all-" + f.all : std::filesystem::path(f.report).filename().string();
  save_model(m, f.out);
  std::size_t posit = 0, total = 0;
  for (const auto& l : m.layers) {
    if (!l.scheme) continue;
    total += l.weight.size();
    if (is_posit(*l.scheme)) posit += l.weight.size();
  }
  out << "quantized " << plan.posit_layers.size() << " posit layer(s), posit parameter fraction "
      << fmt_pct(total ? static_cast<double>(posit) / static_cast<double>(total) : 0.0) << "\n";
  return 0;
}

inline int cmd_eval(const Flags& f, std::ostream& out) {
  require(f.dataset, "--dataset");
  const RunConfig c = resolve_config(f);
  if (f.table_row) {
    std::vector<TableRow> rows;
    if (!f.model.empty()) {
      const Model m = load_model(f.model);
      if (is_quantized(m)) throw DataError("eval --table-row expects a full-precision model");
      rows.push_back(run_table_row(m, load_dataset(f.dataset, c), c, c.seed));
    } else {
      const auto seeds = c.table_seeds.empty() ? std::vector<std::uint64_t>{c.seed} : c.table_seeds;
      for (auto s : seeds) {
        RunConfig cs = c;
        cs.seed = s;
        rows.push_back(run_pipeline(load_dataset(f.dataset, cs), cs, s));
      }
    }
    const auto j = table_json(rows, c);
    if (!f.out.empty()) atomic_write(sibling(f.out, ".csv"), table_csv(rows));
    emit(f.out, dump_json(j), out);
    if (!f.out.empty()) {
      const auto mean = mean_of(rows);
      out << "fp32 " << fmt_pct(mean.fp32) << "  fixp4 " << fmt_pct(mean.fixp4) << "  posit4 " << fmt_pct(mean.posit4)
          << "  mixed " << fmt_pct(mean.mixed) << "\n";
    }
    return 0;
  }
  require(f.model, "--model");
  const Model m = load_model(f.model);
  const Split data = load_dataset(f.dataset, c);
  const Mode mode = is_quantized(m) ? Mode::Quantized : Mode::Fp32;
  nlohmann::ordered_json j{{"mode", mode == Mode::Quantized ? "quantized" : "fp32"},
                           {"samples", data.test.size()},
                           {"accuracy", evaluate(m, data.test, mode)},
                           {"loss", evaluate_loss(m, data.test, mode)}};
  emit(f.out, dump_json(j), out);
  return 0;
}

inline int cmd_macverify(const Flags& f, std::ostream& out, std::ostream& err) {
  require(f.model, "--model");
  require(f.dataset, "--dataset");
  const RunConfig c = resolve_config(f);
  const Model m = load_model(f.model);
  if (!is_quantized(m)) throw DataError("macverify expects a quantized model");
  const Split data = load_dataset(f.dataset, c);
  const std::size_t n = std::min(f.batch, data.test.size());
  const auto order = data.test.identity_order();
  const auto [x, y] = data.test.gather(order, 0, n);
  const auto s = mac_verify(m, x, !f.trace.empty());
  if (!f.trace.empty()) {
    std::ostringstream os;
    write_trace(os, s.trace);
    atomic_write(f.trace, os.str());
  }
  emit(f.out, dump_json(to_json(s)), out);
  if (!s.passed()) {
    err << "macverify: discrepancy of " << s.max_discrepancy_ulp << " sub-unit ULP exceeds 1\n";
    return static_cast<int>(ExitCode::VerificationFailure);
  }
  return 0;
}

inline int cmd_energy(const Flags& f, std::ostream& out) {
  require(f.model, "--model");
  const Model m = load_model(f.model);
  const auto rep = energy_report(count_macs(m));
  std::size_t posit = 0, total = 0;
  for (const auto& l : m.layers) {
    if (!l.has_weights() || !l.scheme) continue;
    total += l.weight.size();
    if (is_posit(*l.scheme)) posit += l.weight.size();
  }
  auto j = to_json(rep);
  j["posit_param_count"] = posit;
  j["total_param_count"] = total;
  j["posit_param_fraction"] = total ? static_cast<double>(posit) / static_cast<double>(total) : 0.0;
  emit(f.out, dump_json(j), out);
  return 0;
}

inline int cmd_export_tables(const Flags& f, std::ostream& out) {
  require(f.out, "--out");
  const std::filesystem::path dir(f.out);
  atomic_write(dir / "posit4_decode.csv", posit_decode_table_csv());
  std::ostringstream os;
  os.precision(17);
  os << "level,code,normalized_value\n";
  const FixPParams p;
  for (int level = 0; level <= p.levels(); ++level)
    os << level << ',' << level + p.code_offset() << ',' << fixp_level_value(level, p) << '\n';
  atomic_write(dir / "fixp4_grid.csv", os.str());
  out << "wrote " << (dir / "posit4_decode.csv").string() << " and " << (dir / "fixp4_grid.csv").string() << "\n";
  return 0;
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"mixq: mixed Posit4/FixP4 quantization toolkit", "mixq"};
  app.require_subcommand(1, 1);
  Flags f;
  auto* train_cmd = app.add_subcommand("train", "Train a model (full precision, or QAT for a quantized model)");
  auto* analyze_cmd = app.add_subcommand("analyze", "Per-layer sensitivity and Posit layer assignment");
  auto* quantize_cmd = app.add_subcommand("quantize", "Attach schemes from a report (or --all) and snap weights");
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy of a model, or the fp32/FixP4/Posit4/mixed comparison");
  auto* mac_cmd = app.add_subcommand("macverify", "Check quantized inference against the integer MAC model");
  auto* energy_cmd = app.add_subcommand("energy", "MAC counts and energy overhead of a quantized model");
  auto* export_cmd = app.add_subcommand("export-tables", "Write the Posit4 decode table and FixP4 grid");
  for (auto* s : {train_cmd, analyze_cmd, quantize_cmd, eval_cmd, mac_cmd, energy_cmd, export_cmd})
    add_run_options(s, f);
  quantize_cmd->add_option("--report", f.report, "Sensitivity report from analyze");
  quantize_cmd->add_option("--all", f.all, "Quantize every layer to one system: fixp | posit");
  eval_cmd->add_flag("--table-row", f.table_row, "Run the four-way comparison");
  mac_cmd->add_option("--batch", f.batch, "Test samples to replay (default 64)");
  mac_cmd->add_option("--trace", f.trace, "Also write the first sample's MAC records here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : static_cast<int>(ExitCode::Usage);
  }
  try {
    if (*train_cmd) return cmd_train(f, out);
    if (*analyze_cmd) return cmd_analyze(f, out);
    if (*quantize_cmd) return cmd_quantize(f, out);
    if (*eval_cmd) return cmd_eval(f, out);
    if (*mac_cmd) return cmd_macverify(f, out, err);
    if (*energy_cmd) return cmd_energy(f, out);
    return cmd_export_tables(f, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::DataError);
  }
}

}  // namespace mixq
