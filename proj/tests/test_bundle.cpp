#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "adabin/bundle.hpp"
#include "adabin/costmodel.hpp"
#include "adabin/error.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace adabin;

namespace {

// Moves every trainable quantity and batch-norm statistic away from its
// initial value so the export has something non-trivial to carry.
void perturb(Model& m, std::uint64_t seed) {
  testutil::Rng rng(seed);
  std::uniform_real_distribution<float> u(-0.3f, 0.3f);
  for (Parameter* p : m.parameters()) {
    for (float& v : p->value.data()) {
      switch (p->role) {
        case Role::QuantizerAlpha: v = 0.5f + std::fabs(u(rng)) * 3.0f; break;
        case Role::QuantizerBeta: v = u(rng); break;
        case Role::MaxoutGamma:
        case Role::BatchNorm: v += u(rng); break;
        case Role::Weight: break;
      }
    }
  }
  for (const Buffer& b : m.buffers()) {
    const bool var = b.name.find("var") != std::string::npos;
    for (float& v : b.tensor->data()) v = var ? 0.5f + std::fabs(u(rng)) * 3.0f : u(rng);
  }
}

ModelConfig small_config(const std::string& id) {
  ModelConfig cfg = model_config_from_id(id);
  cfg.width = 0.5;
  cfg.in_height = cfg.in_width = 12;
  return cfg;
}

int argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t k = logits.dim(1);
  int best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (logits[row * k + j] > logits[row * k + best]) best = static_cast<int>(j);
  }
  return best;
}

void check_parity(Model& model, const PackedModel& pm, std::uint64_t seed) {
  testutil::Rng rng(seed);
  const Tensor x = testutil::random_tensor(model.input_shape(32), rng, -2.0f, 2.0f);
  const Tensor ref = model.forward(x, Mode::Eval);
  const Tensor got = pm.forward(x);
  REQUIRE(got.shape() == ref.shape());
  CHECK(testutil::max_rel_err(got.data(), ref.data()) <= 1e-3);
  for (std::size_t i = 0; i < x.dim(0); ++i) CHECK(argmax_row(got, i) == argmax_row(ref, i));
}

}  // namespace

TEST_CASE("export and round-trip preserve predictions") {
  struct Variant {
    std::string id;
    bool float_last;
    WeightMode wmode;
  };
  const std::vector<Variant> variants = {
      {"smallcnn-adabin", true, WeightMode::Adabin},
      {"smallcnn-adabin", false, WeightMode::Adabin},
      {"smallcnn-adabin", true, WeightMode::AdabinLearnable},
      {"smallcnn-sign-prelu", true, WeightMode::ScaledSign},
      {"smallcnn-float", true, WeightMode::Adabin},
      {"resnet20-adabin", true, WeightMode::Adabin},
  };
  std::uint64_t seed = 1;
  for (const auto& v : variants) {
    CAPTURE(v.id);
    CAPTURE(v.float_last);
    ModelConfig cfg = small_config(v.id);
    cfg.float_last = v.float_last;
    if (cfg.binarize) cfg.weight = v.wmode;
    Model model(cfg, seed);
    perturb(model, seed + 100);
    const PackedModel pm = export_packed_model(model);
    CHECK(pm.binary_layers() == model.binary_convs().size());
    check_parity(model, pm, seed + 200);

    const auto bytes = serialize_bundle(pm);
    const PackedModel back = deserialize_bundle(bytes);
    CHECK(serialize_bundle(back) == bytes);
    check_parity(model, back, seed + 300);
    ++seed;
  }
}

TEST_CASE("save and load through a file") {
  Model model(small_config("smallcnn-adabin"), 3);
  perturb(model, 4);
  const std::string dir = testutil::temp_dir("bundle");
  const std::string path = dir + "/model.adbn";
  save_bundle(export_packed_model(model), path);
  const PackedModel pm = load_bundle(path);
  check_parity(model, pm, 5);
  CHECK_THROWS_AS(load_bundle(dir + "/missing.adbn"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("bundle size tracks the cost model") {
  Model model(model_config_from_id("resnet20-adabin"), 0);
  perturb(model, 9);
  const auto bytes = serialize_bundle(export_packed_model(model));
  const double predicted = model_cost(model).params_bytes;
  const double ratio = static_cast<double>(bytes.size()) / predicted;
  CAPTURE(bytes.size());
  CAPTURE(predicted);
  CHECK(std::fabs(ratio - 1.0) <= 0.05);
}

TEST_CASE("export rejects non-finite activation specs") {
  Model model(small_config("smallcnn-adabin"), 0);
  model.binary_convs()[1]->alpha_a.value[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(export_packed_model(model), Error);
  model.binary_convs()[1]->alpha_a.value[0] = 1.0f;
  model.binary_convs()[2]->beta_a.value[0] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(export_packed_model(model), Error);
}

TEST_CASE("empty graphs are rejected") {
  PackedModel empty;
  CHECK_THROWS_AS(serialize_bundle(empty), Error);
  CHECK_THROWS_AS(empty.finalize(), ShapeError);
}

TEST_CASE("corrupt bundles fail with a byte offset") {
  Model model(small_config("smallcnn-adabin"), 0);
  const auto good = serialize_bundle(export_packed_model(model));

  auto expect_format_error = [](const std::vector<std::uint8_t>& b, const std::string& needle) {
    try {
      deserialize_bundle(b);
      FAIL("expected a FormatError");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CAPTURE(msg);
      CHECK(msg.find(needle) != std::string::npos);
    }
  };

  expect_format_error({}, "byte offset 0");
  auto magic = good;
  magic[0] = 'X';
  expect_format_error(magic, "bad magic");
  auto version = good;
  version[4] = 9;
  expect_format_error(version, "unsupported version");

  // The first record tag starts after magic, version and five u32 header words.
  auto tag = good;
  const std::uint32_t bogus = 99;
  std::memcpy(tag.data() + 26, &bogus, 4);
  expect_format_error(tag, "unknown record tag 99 at byte offset 26");

  auto truncated = good;
  truncated.resize(good.size() - 7);
  expect_format_error(truncated, "byte offset");

  auto trailing = good;
  trailing.push_back(0);
  expect_format_error(trailing, "1 trailing bytes");

  // A wrong class count only shows up once shapes are propagated.
  auto classes = good;
  const std::uint32_t eleven = 11;
  std::memcpy(classes.data() + 18, &eleven, 4);
  expect_format_error(classes, "inconsistent graph");
}

TEST_CASE("packed forward checks its input shape") {
  const PackedModel pm = export_packed_model(Model(small_config("smallcnn-adabin"), 0));
  CHECK_THROWS_AS(pm.forward(Tensor({1, 3, 8, 8})), ShapeError);
}
