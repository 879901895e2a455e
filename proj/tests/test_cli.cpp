#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mixq/cli.hpp"

using namespace mixq;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mixq");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path d = fs::temp_directory_path() / (std::string("mixq_cli_") + info->name());
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream f(p);
  std::size_t n = 0;
  for (std::string line; std::getline(f, line);) ++n;
  return n;
}

fs::path small_config(const fs::path& d) {
  const auto p = d / "cfg.json";
  std::ofstream(p) << R"({"eta": 0.5, "hidden": [16],
    "train": {"epochs": 2, "batch_size": 32}, "retrain": {"epochs": 1, "batch_size": 32},
    "dataset": {"classes": 3, "dim": 8, "samples_per_class": 40}})";
  return p;
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli({"--help"}).code, 0);
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"frobnicate"}).code, 1);
  EXPECT_EQ(cli({"analyze", "--bogus"}).code, 1);
  EXPECT_EQ(cli({"analyze", "--eta", "2"}).code, 1);
  EXPECT_EQ(cli({"train", "--dataset", "synthetic"}).code, 1);  // no --out
  EXPECT_EQ(cli({"train", "--dataset", "synthetic", "--out", "x.json", "--fixp-estimator", "magic"}).code, 1);
}

TEST(Cli, MissingDatasetWritesNothing) {
  const auto d = scratch_dir();
  const auto r = cli({"train", "--dataset", (d / "nope.csv").string(), "--out", (d / "m.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nope.csv"), std::string::npos);
  EXPECT_TRUE(fs::is_empty(d));
}

TEST(Cli, BadConfigIsUsageError) {
  const auto d = scratch_dir();
  std::ofstream(d / "c.json") << R"({"epochs": 3})";
  EXPECT_EQ(cli({"train", "--dataset", "synthetic", "--config", (d / "c.json").string(), "--out",
                 (d / "m.json").string()})
                .code,
            1);
}

TEST(Cli, ExportTables) {
  const auto d = scratch_dir();
  ASSERT_EQ(cli({"export-tables", "--out", d.string()}).code, 0);
  EXPECT_EQ(count_lines(d / "posit4_decode.csv"), 17u);
  EXPECT_EQ(count_lines(d / "fixp4_grid.csv"), 17u);
}

TEST(Cli, EndToEnd) {
  const auto d = scratch_dir();
  const auto cfg = small_config(d).string();
  const auto m = (d / "m.json").string();
  auto run = [&](std::vector<std::string> a) {
    a.insert(a.end(), {"--config", cfg});
    return cli(a);
  };

  auto r = run({"train", "--dataset", "synthetic", "--out", m});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(d / "m.metrics.csv"), 3u);
  EXPECT_TRUE(fs::exists(d / "m.bin"));
  const auto summary = nlohmann::json::parse(read_file(d / "m.summary.json"));
  EXPECT_EQ(summary["mode"], "fp32");

  r = run({"analyze", "--model", m, "--dataset", "synthetic", "--out", (d / "report.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = nlohmann::json::parse(read_file(d / "report.json"));
  EXPECT_EQ(report["layers"].size(), 2u);
  EXPECT_DOUBLE_EQ(report["eta"].get<double>(), 0.5);

  r = run({"quantize", "--model", m, "--report", (d / "report.json").string(), "--out", (d / "q.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Model q = load_model(d / "q.json");
  EXPECT_TRUE(q.layer("fc1").scheme.has_value());
  EXPECT_EQ(q.layer("act1").kind, LayerKind::Pact);

  r = run({"eval", "--model", (d / "q.json").string(), "--dataset", "synthetic"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ev = nlohmann::json::parse(r.out);
  EXPECT_EQ(ev["mode"], "quantized");
  EXPECT_GE(ev["accuracy"].get<double>(), 0.0);

  r = run({"macverify", "--model", (d / "q.json").string(), "--dataset", "synthetic", "--batch", "4", "--trace",
           (d / "trace.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["passed"], true);
  EXPECT_EQ(count_lines(d / "trace.csv"), 16u * 3);

  r = run({"energy", "--model", (d / "q.json").string(), "--out", (d / "energy.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto en = nlohmann::json::parse(read_file(d / "energy.json"));
  EXPECT_EQ(en["total_param_count"], 8 * 16 + 16 * 3);

  r = run({"train", "--dataset", "synthetic", "--model", (d / "q.json").string(), "--out",
           (d / "q2.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(read_file(d / "q2.summary.json"))["mode"], "quantized");

  r = run({"quantize", "--model", m, "--all", "posit", "--out", (d / "p.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* id : {"fc1", "fc2"})
    EXPECT_TRUE(std::holds_alternative<PositScheme>(*load_model(d / "p.json").layer(id).scheme));

  EXPECT_EQ(run({"quantize", "--model", m, "--all", "posit", "--report", (d / "report.json").string(), "--out",
                 (d / "x.json").string()})
                .code,
            1);
  EXPECT_EQ(run({"analyze", "--model", (d / "q.json").string(), "--dataset", "synthetic"}).code, 2);
  EXPECT_EQ(run({"macverify", "--model", m, "--dataset", "synthetic"}).code, 2);
  EXPECT_FALSE(fs::exists(d / "x.json"));

  r = run({"eval", "--table-row", "--model", m, "--dataset", "synthetic", "--out", (d / "table.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto t = nlohmann::json::parse(read_file(d / "table.json"));
  EXPECT_EQ(t["rows"].size(), 1u);
  EXPECT_EQ(count_lines(d / "table.csv"), 2u);
}

TEST(Cli, ReportForAnotherModelIsDataError) {
  const auto d = scratch_dir();
  const auto cfg = small_config(d).string();
  const auto m = (d / "m.json").string();
  ASSERT_EQ(cli({"train", "--dataset", "synthetic", "--out", m, "--config", cfg, "--epochs", "1"}).code, 0);
  std::ofstream(d / "r.json") << R"({"eta": 0.1, "posit_layers": [{"layer_id": "fc9", "variant": "sc4"}],
                                      "fixp_layers": ["fc1"]})";
  const auto r = cli({"quantize", "--model", m, "--report", (d / "r.json").string(), "--out", (d / "q.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(d / "q.json"));
}
