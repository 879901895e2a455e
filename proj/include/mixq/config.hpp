#pragma once
// Run configuration: JSON file plus command-line overrides (flags win).

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixq/dataset.hpp"
#include "mixq/model_io.hpp"
#include "mixq/train.hpp"

namespace mixq {

struct RunConfig {
  double eta = 0.1;
  std::uint64_t seed = 1;
  TrainConfig train{};    // full-precision training
  TrainConfig retrain{};  // quantization-aware retraining
  int fixp_int_bits = 2;
  int fixp_frac_bits = 2;
  bool skip_nonpositive = true;
  bool quantize_first_last = true;
  double pact_alpha = 10.0;
  std::size_t calib_batches = 0;  // 0: whole training split
  std::vector<std::size_t> hidden{256, 128};
  BlobConfig blobs{};
  double test_fraction = 0.2;
  std::size_t idx_limit = 0;
  std::vector<std::uint64_t> table_seeds{};  // empty: just `seed`

  RunConfig() {
    blobs.center_spread = 0.4;
    retrain.epochs = 10;
    retrain.lr_max = 5e-4;
    retrain.lr_min = 1e-6;
  }

  FixPParams fixp() const { return FixPParams::from_split(fixp_int_bits, fixp_frac_bits); }

  void validate() const {
    if (!(eta >= 0.0 && eta <= 1.0)) throw UsageError("eta must be in [0, 1]");
    train.validate();
    retrain.validate();
    if (fixp_int_bits + fixp_frac_bits != 4 || fixp_int_bits < 1)
      throw UsageError("FixP weights are 4-bit: int_bits + frac_bits must be 4 with int_bits >= 1");
    if (!(pact_alpha > 0.0)) throw UsageError("pact_alpha must be > 0");
    if (hidden.empty()) throw UsageError("hidden must list at least one layer width");
    for (auto h : hidden)
      if (h == 0) throw UsageError("hidden layer widths must be > 0");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("test_fraction must be in (0, 1)");
    if (blobs.classes < 2 || blobs.dim == 0 || blobs.samples_per_class == 0)
      throw UsageError("synthetic dataset needs classes >= 2, dim > 0, samples_per_class > 0");
  }
};

namespace detail {

template <class T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void train_from_json(const nlohmann::json& j, TrainConfig& t) {
  take(j, "epochs", t.epochs);
  take(j, "batch_size", t.batch_size);
  take(j, "lr_max", t.lr_max);
  take(j, "lr_min", t.lr_min);
  take(j, "beta1", t.beta1);
  take(j, "beta2", t.beta2);
  take(j, "eps", t.eps);
  take(j, "weight_decay", t.weight_decay);
  if (j.contains("fixp_estimator")) t.fixp_estimator = parse_estimator(j.at("fixp_estimator").get<std::string>());
  if (j.contains("posit_estimator")) t.posit_estimator = parse_estimator(j.at("posit_estimator").get<std::string>());
}

inline nlohmann::json train_to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"lr_max", t.lr_max},
          {"lr_min", t.lr_min},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"eps", t.eps},
          {"weight_decay", t.weight_decay},
          {"fixp_estimator", to_string(t.fixp_estimator)},
          {"posit_estimator", to_string(t.posit_estimator)}};
}

}  // namespace detail

inline void apply_config_json(RunConfig& c, const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "eta",         "seed",           "train",         "retrain",   "fixp_int_bits", "fixp_frac_bits",
      "skip_nonpositive", "quantize_first_last", "pact_alpha", "calib_batches", "hidden", "dataset",
      "test_fraction", "idx_limit", "table_seeds"};
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw UsageError("unknown config key '" + k + "'");
  try {
    detail::take(j, "eta", c.eta);
    detail::take(j, "seed", c.seed);
    if (j.contains("train")) detail::train_from_json(j.at("train"), c.train);
    if (j.contains("retrain")) detail::train_from_json(j.at("retrain"), c.retrain);
    detail::take(j, "fixp_int_bits", c.fixp_int_bits);
    detail::take(j, "fixp_frac_bits", c.fixp_frac_bits);
    detail::take(j, "skip_nonpositive", c.skip_nonpositive);
    detail::take(j, "quantize_first_last", c.quantize_first_last);
    detail::take(j, "pact_alpha", c.pact_alpha);
    detail::take(j, "calib_batches", c.calib_batches);
    detail::take(j, "hidden", c.hidden);
    detail::take(j, "test_fraction", c.test_fraction);
    detail::take(j, "idx_limit", c.idx_limit);
    detail::take(j, "table_seeds", c.table_seeds);
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      detail::take(d, "classes", c.blobs.classes);
      detail::take(d, "dim", c.blobs.dim);
      detail::take(d, "samples_per_class", c.blobs.samples_per_class);
      detail::take(d, "center_spread", c.blobs.center_spread);
      detail::take(d, "noise", c.blobs.noise);
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad config value: ") + e.what());
  }
}

inline RunConfig load_config(const std::filesystem::path& p) {
  RunConfig c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config '" + p.string() + "' is not valid JSON: " + std::string(e.what()));
  }
  apply_config_json(c, j);
  return c;
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"eta", c.eta},
          {"seed", c.seed},
          {"train", detail::train_to_json(c.train)},
          {"retrain", detail::train_to_json(c.retrain)},
          {"fixp_int_bits", c.fixp_int_bits},
          {"fixp_frac_bits", c.fixp_frac_bits},
          {"skip_nonpositive", c.skip_nonpositive},
          {"quantize_first_last", c.quantize_first_last},
          {"pact_alpha", c.pact_alpha},
          {"calib_batches", c.calib_batches},
          {"hidden", c.hidden},
          {"dataset",
           {{"classes", c.blobs.classes},
            {"dim", c.blobs.dim},
            {"samples_per_class", c.blobs.samples_per_class},
            {"center_spread", c.blobs.center_spread},
            {"noise", c.blobs.noise}}},
          {"test_fraction", c.test_fraction},
          {"idx_limit", c.idx_limit},
          {"table_seeds", c.table_seeds}};
}

// "synthetic", a .csv path, or "idx:<images>,<labels>". The split and the
// per-feature normalization (fitted on the training part) depend only on the
// data and the seed, so every command sees the same partitions.
inline Split load_dataset(const std::string& spec, const RunConfig& c) {
  Dataset d;
  if (spec == "synthetic") {
    BlobConfig b = c.blobs;
    b.seed = c.seed;
    d = make_blobs(b);
  } else if (spec.rfind("idx:", 0) == 0) {
    const auto rest = spec.substr(4);
    const auto comma = rest.find(',');
    if (comma == std::string::npos) throw UsageError("IDX dataset spec is idx:<images>,<labels>");
    d = load_idx(rest.substr(0, comma), rest.substr(comma + 1), c.idx_limit);
  } else {
    d = load_csv(spec);
  }
  Split s = split_dataset(d, c.test_fraction, c.seed);
  const auto z = Normalization::fit(s.train);
  z.apply(s.train);
  z.apply(s.test);
  return s;
}

}  // namespace mixq
