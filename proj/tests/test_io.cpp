#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mixq/config.hpp"
#include "mixq/macverify.hpp"
#include "mixq/model_io.hpp"
#include "mixq/sensitivity.hpp"

using namespace mixq;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path d = fs::temp_directory_path() / (std::string("mixq_io_") + info->test_suite_name() + "_" + info->name());
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_bytes(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

Model mixed_mlp(std::uint64_t seed = 3) {
  Model m = make_mlp(8, {12, 6}, 3, seed);
  AssignmentPlan plan;
  plan.posit_layers = {{"fc2", ScaleVariant::Sc8}};
  plan.fixp_layers = {"fc1", "fc3"};
  apply_plan(m, plan);
  round_to_storage(m);
  m.provenance["note"] = "unit";
  return m;
}

Tensor random_batch(std::size_t n, std::size_t dim, std::uint64_t seed, double spread = 3.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, spread);
  Tensor x(Shape{n, dim});
  for (double& v : x.data()) v = nd(rng);
  return x;
}

}  // namespace

TEST(ModelIo, SaveLoadSaveIsByteIdentical) {
  const auto d = scratch_dir();
  const Model m = mixed_mlp();
  save_model(m, d / "a.json");
  const Model back = load_model(d / "a.json");
  save_model(back, d / "b.json");
  EXPECT_EQ(read_file(d / "a.bin"), read_file(d / "b.bin"));
  auto ma = nlohmann::json::parse(read_file(d / "a.json"));
  auto mb = nlohmann::json::parse(read_file(d / "b.json"));
  EXPECT_EQ(ma["blob"]["file"], "a.bin");
  ma["blob"].erase("file");
  mb["blob"].erase("file");
  EXPECT_EQ(ma, mb);
  EXPECT_EQ(back.provenance.at("note"), "unit");
}

TEST(ModelIo, ReloadedModelComputesTheSameLogits) {
  const auto d = scratch_dir();
  const Model m = mixed_mlp();
  save_model(m, d / "m.json");
  const Model back = load_model(d / "m.json");
  const Tensor x = random_batch(5, 8, 1);
  for (Mode mode : {Mode::Fp32, Mode::Quantized}) {
    const auto a = forward(m, x, mode).logits;
    const auto b = forward(back, x, mode).logits;
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  }
  EXPECT_TRUE(std::holds_alternative<PositScheme>(*back.layer("fc2").scheme));
  EXPECT_EQ(std::get<PositScheme>(*back.layer("fc2").scheme).variant, ScaleVariant::Sc8);
  EXPECT_EQ(back.layer("act1").kind, LayerKind::Pact);
}

TEST(ModelIo, NoTemporaryFilesLeftBehind) {
  const auto d = scratch_dir();
  save_model(mixed_mlp(), d / "sub" / "m.json");
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(d / "sub")) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  EXPECT_EQ(names, (std::vector<std::string>{"m.bin", "m.json"}));
}

TEST(ModelIo, CorruptBlobIsRejected) {
  const auto d = scratch_dir();
  save_model(mixed_mlp(), d / "m.json");
  std::string blob = read_file(d / "m.bin");
  blob[10] ^= 0x40;
  write_bytes(d / "m.bin", blob);
  EXPECT_THROW(load_model(d / "m.json"), DataError);
}

TEST(ModelIo, TruncatedOrMissingBlobIsRejected) {
  const auto d = scratch_dir();
  save_model(mixed_mlp(), d / "m.json");
  const std::string blob = read_file(d / "m.bin");
  write_bytes(d / "m.bin", blob.substr(0, blob.size() - 4));
  EXPECT_THROW(load_model(d / "m.json"), DataError);
  fs::remove(d / "m.bin");
  EXPECT_THROW(load_model(d / "m.json"), DataError);
}

TEST(ModelIo, MalformedManifestIsRejected) {
  const auto d = scratch_dir();
  save_model(mixed_mlp(), d / "m.json");
  const auto good = nlohmann::json::parse(read_file(d / "m.json"));
  auto bad_version = good;
  bad_version["version"] = 99;
  write_bytes(d / "v.json", bad_version.dump());
  fs::copy_file(d / "m.bin", d / "v.bin");
  EXPECT_THROW(load_model(d / "v.json"), DataError);

  auto bad_kind = good;
  bad_kind["layers"][0]["kind"] = "lstm";
  write_bytes(d / "m.json", bad_kind.dump());
  EXPECT_THROW(load_model(d / "m.json"), DataError);

  auto bad_shape = good;
  bad_shape["layers"][0]["weight"]["shape"] = {999, 999};
  write_bytes(d / "m.json", bad_shape.dump());
  EXPECT_THROW(load_model(d / "m.json"), DataError);

  write_bytes(d / "m.json", "{not json");
  EXPECT_THROW(load_model(d / "m.json"), DataError);
  EXPECT_THROW(load_model(d / "absent.json"), DataError);
}

TEST(ModelIo, ConvModelRoundTrip) {
  std::mt19937_64 rng(4);
  Model m;
  m.input_shape = {1, 5, 5};
  m.layers.push_back(make_conv("conv1", 1, 2, 3, Padding::Same, rng));
  m.layers.push_back(make_simple("act1", LayerKind::Relu));
  m.layers.push_back(make_simple("flat", LayerKind::Flatten));
  m.layers.push_back(make_dense("fc", 50, 3, rng));
  m.layers.push_back(make_simple("loss", LayerKind::SoftmaxXent));
  round_to_storage(m);
  const auto d = scratch_dir();
  save_model(m, d / "c.json");
  const Model back = load_model(d / "c.json");
  EXPECT_EQ(back.layer("conv1").padding, Padding::Same);
  EXPECT_EQ(back.layer("conv1").weight.shape(), (Shape{2, 1, 3, 3}));
  EXPECT_EQ(back.input_shape, m.input_shape);
}

TEST(Config, DefaultsAndOverrides) {
  RunConfig c;
  EXPECT_DOUBLE_EQ(c.eta, 0.1);
  EXPECT_EQ(c.retrain.epochs, 10);
  EXPECT_NO_THROW(c.validate());
  apply_config_json(c, nlohmann::json::parse(R"({"eta": 0.25, "train": {"epochs": 3, "posit_estimator": "ste"},
                                                  "dataset": {"dim": 16}, "hidden": [32]})"));
  EXPECT_DOUBLE_EQ(c.eta, 0.25);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.train.posit_estimator, GradEstimator::Ste);
  EXPECT_EQ(c.blobs.dim, 16u);
  EXPECT_EQ(c.hidden, (std::vector<std::size_t>{32}));
}

TEST(Config, JsonRoundTrip) {
  RunConfig c;
  c.eta = 0.3;
  c.skip_nonpositive = false;
  c.table_seeds = {1, 2};
  RunConfig d;
  apply_config_json(d, to_json(c));
  EXPECT_EQ(to_json(c), to_json(d));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  RunConfig c;
  EXPECT_THROW(apply_config_json(c, nlohmann::json::parse(R"({"etaa": 1})")), UsageError);
  EXPECT_THROW(apply_config_json(c, nlohmann::json::parse(R"({"eta": "high"})")), UsageError);
  EXPECT_THROW(apply_config_json(c, nlohmann::json::parse("[1]")), UsageError);
  c.eta = 1.5;
  EXPECT_THROW(c.validate(), UsageError);
  c.eta = 0.1;
  c.fixp_int_bits = 3;
  EXPECT_THROW(c.validate(), UsageError);
}

TEST(Datasets, CsvLoader) {
  const auto d = scratch_dir();
  write_bytes(d / "ok.csv", "a,label,b\n1.5,0,2\n-1,2,0.25\n");
  const auto ds = load_csv(d / "ok.csv");
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.num_classes, 3u);
  EXPECT_EQ(ds.features.shape(), (Shape{2, 2}));
  EXPECT_EQ(ds.features[0], 1.5);
  EXPECT_EQ(ds.features[1], 2.0);
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 2}));

  write_bytes(d / "nolabel.csv", "a,b\n1,2\n");
  EXPECT_THROW(load_csv(d / "nolabel.csv"), DataError);
  write_bytes(d / "bad.csv", "a,label\nx,1\n");
  EXPECT_THROW(load_csv(d / "bad.csv"), DataError);
  write_bytes(d / "ragged.csv", "a,label\n1,1,3\n");
  EXPECT_THROW(load_csv(d / "ragged.csv"), DataError);
  write_bytes(d / "neg.csv", "a,label\n1,-1\n");
  EXPECT_THROW(load_csv(d / "neg.csv"), DataError);
  EXPECT_THROW(load_csv(d / "missing.csv"), DataError);
}

TEST(Datasets, IdxLoader) {
  const auto d = scratch_dir();
  auto be = [](std::uint32_t v) {
    return std::string{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
  };
  std::string img = be(0x803) + be(3) + be(2) + be(2);
  for (int i = 0; i < 12; ++i) img.push_back(static_cast<char>(i * 20));
  const std::string lab = be(0x801) + be(3) + std::string{1, 0, 4};
  write_bytes(d / "img", img);
  write_bytes(d / "lab", lab);
  const auto ds = load_idx(d / "img", d / "lab");
  EXPECT_EQ(ds.features.shape(), (Shape{3, 1, 2, 2}));
  EXPECT_DOUBLE_EQ(ds.features[5], 100.0 / 255.0);
  EXPECT_EQ(ds.num_classes, 5u);
  EXPECT_EQ(load_idx(d / "img", d / "lab", 2).size(), 2u);

  write_bytes(d / "short", img.substr(0, img.size() - 1));
  EXPECT_THROW(load_idx(d / "short", d / "lab"), DataError);
  EXPECT_THROW(load_idx(d / "lab", d / "img"), DataError);
  write_bytes(d / "lab2", be(0x801) + be(2) + std::string{1, 0});
  EXPECT_THROW(load_idx(d / "img", d / "lab2"), DataError);
}

TEST(Datasets, SyntheticSpecIsSeededAndNormalized) {
  RunConfig c;
  c.blobs.samples_per_class = 20;
  c.blobs.dim = 4;
  const auto a = load_dataset("synthetic", c);
  const auto b = load_dataset("synthetic", c);
  EXPECT_EQ(a.train.features.data(), b.train.features.data());
  EXPECT_EQ(a.test.size(), 40u);
  double mean = 0.0;
  for (std::size_t i = 0; i < a.train.size(); ++i) mean += a.train.features[i * 4];
  EXPECT_NEAR(mean / static_cast<double>(a.train.size()), 0.0, 1e-9);
  EXPECT_THROW(load_dataset("idx:only_one", c), UsageError);
}

TEST(MacVerify, QuantizedMlpMatchesIntegerModel) {
  Model m = mixed_mlp(7);
  const auto s = mac_verify(m, random_batch(6, 8, 2));
  EXPECT_EQ(s.samples, 6u);
  ASSERT_EQ(s.layers.size(), 2u);  // fc1 reads raw input
  EXPECT_EQ(s.layers[0].layer_id, "fc2");
  EXPECT_EQ(s.layers[0].path, "sc8");
  EXPECT_EQ(s.layers[1].path, "fixp");
  EXPECT_EQ(s.dot_products, 6u * (6 + 3));
  EXPECT_LT(s.max_discrepancy_ulp, 1e-6);
  EXPECT_TRUE(s.passed());
  ASSERT_EQ(s.skipped.size(), 1u);
  EXPECT_EQ(s.skipped[0].layer_id, "fc1");
}

TEST(MacVerify, SnappedWeightsAndAllVariants) {
  for (auto v : {ScaleVariant::Unit, ScaleVariant::Sc4, ScaleVariant::Sc8}) {
    Model m = make_mlp(8, {10, 10}, 4, 11);
    AssignmentPlan plan;
    plan.posit_layers = {{"fc2", v}, {"fc3", v}};
    apply_plan(m, plan);
    snap_weights(m);
    const auto s = mac_verify(m, random_batch(4, 8, 5, 10.0));
    EXPECT_LT(s.max_discrepancy_ulp, 1e-6) << to_string(v);
    EXPECT_EQ(s.saturations, 0u);
  }
}

TEST(MacVerify, ConvThroughFlatten) {
  std::mt19937_64 rng(9);
  Model m;
  m.input_shape = {1, 6, 6};
  m.layers.push_back(make_conv("conv1", 1, 3, 3, Padding::Same, rng));
  m.layers.push_back(make_simple("act1", LayerKind::Relu));
  m.layers.push_back(make_conv("conv2", 3, 2, 3, Padding::Valid, rng));
  m.layers.push_back(make_simple("act2", LayerKind::Relu));
  m.layers.push_back(make_simple("flat", LayerKind::Flatten));
  m.layers.push_back(make_dense("fc", 32, 3, rng));
  m.layers.push_back(make_simple("loss", LayerKind::SoftmaxXent));
  AssignmentPlan plan;
  plan.posit_layers = {{"conv2", ScaleVariant::Sc4}};
  apply_plan(m, plan);
  Tensor x(Shape{2, 1, 6, 6});
  std::mt19937_64 r2(1);
  std::normal_distribution<double> nd(0.0, 4.0);
  for (double& v : x.data()) v = nd(r2);
  const auto s = mac_verify(m, x, true);
  ASSERT_EQ(s.layers.size(), 2u);
  EXPECT_EQ(s.layers[0].dot_products, 2u * 2 * 4 * 4);
  EXPECT_EQ(s.layers[1].dot_products, 2u * 3);
  EXPECT_LT(s.max_discrepancy_ulp, 1e-6);
  EXPECT_EQ(s.trace.size(), 2u * 4 * 4 * 27 + 3 * 32);
  const auto replay = replay_trace(s.trace);
  EXPECT_EQ(replay.acc.size(), 2u);
  EXPECT_TRUE(replay.acc.at("conv2").count("sc4"));
  EXPECT_TRUE(replay.acc.at("fc").count("fixp"));
}

TEST(MacVerify, WideFixpLayerSaturates) {
  std::mt19937_64 rng(1);
  Model m;
  m.input_shape = {1300};
  m.layers.push_back(make_simple("act0", LayerKind::Relu));
  m.layers.push_back(make_dense("fc", 1300, 2, rng));
  m.layers.push_back(make_simple("loss", LayerKind::SoftmaxXent));
  AssignmentPlan plan;
  plan.fixp_layers = {"fc"};
  apply_plan(m, plan);
  for (double& w : m.layers[1].weight.data()) w = 1.0;
  std::get<FixPParams>(*m.layers[1].scheme).scale = 1e-3;  // every weight clips to the top code
  const auto s = mac_verify(m, Tensor(Shape{1, 1300}, 50.0));
  EXPECT_EQ(s.dot_products, 2u);
  EXPECT_EQ(s.saturations, 2u);
  EXPECT_TRUE(s.passed());
}

TEST(MacVerify, EmptyBatch) {
  const auto s = mac_verify(mixed_mlp(), Tensor(Shape{0, 8}));
  EXPECT_EQ(s.samples, 0u);
  EXPECT_EQ(s.dot_products, 0u);
  EXPECT_TRUE(s.passed());
  const auto j = to_json(s);
  EXPECT_EQ(j["passed"], true);
}
