#include <filesystem>
#include <fstream>
#include <sstream>

#include "adabin/checkpoint.hpp"
#include "adabin/config.hpp"
#include "adabin/error.hpp"
#include "adabin/train.hpp"
#include "doctest.h"
#include "json.hpp"
#include "test_util.hpp"

using namespace adabin;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

// Digit-like IDX data: each class lights a different block of the image.
void write_synthetic_mnist(const std::string& dir, std::size_t train, std::size_t test,
                           std::uint64_t seed) {
  testutil::Rng rng(seed);
  std::normal_distribution<float> noise(0.0f, 30.0f);
  auto make = [&](const std::string& prefix, std::size_t count) {
    std::vector<std::uint8_t> px(count * 784);
    std::vector<int> labels(count);
    for (std::size_t i = 0; i < count; ++i) {
      const int label = static_cast<int>(i % 10);
      labels[i] = label;
      const std::size_t by = static_cast<std::size_t>(label / 5) * 14, bx = (label % 5) * 5;
      for (std::size_t y = 0; y < 28; ++y)
        for (std::size_t x = 0; x < 28; ++x) {
          const bool on = y >= by && y < by + 12 && x >= bx && x < bx + 6;
          const float v = (on ? 200.0f : 20.0f) + noise(rng);
          px[i * 784 + y * 28 + x] = static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f));
        }
    }
    write_idx_images(dir + "/" + prefix + "-images-idx3-ubyte", count, 28, 28, px);
    write_idx_labels(dir + "/" + prefix + "-labels-idx1-ubyte", labels);
  };
  make("train", train);
  make("t10k", test);
}

struct Fixture {
  std::string root = testutil::temp_dir("train");
  std::string cifar = root + "/cifar";
  DatasetPair data;

  Fixture() {
    fs::create_directories(cifar);
    write_synthetic_cifar10(cifar, 40, 100, 11);
    data = load_cifar10(cifar, 0);
  }
  ~Fixture() { fs::remove_all(root); }

  RunConfig config(const std::string& out, int epochs, std::uint64_t seed = 0) const {
    return make_run_config({{"model", "smallcnn-adabin"},
                            {"width", "0.25"},
                            {"epochs", std::to_string(epochs)},
                            {"batch", "50"},
                            {"seed", std::to_string(seed)},
                            {"cifar_records", "0"},
                            {"data_dir", cifar},
                            {"out", root + "/" + out}});
  }
};

}  // namespace

TEST_CASE("one epoch on a 512-example MNIST-format set lowers the loss") {
  const std::string dir = testutil::temp_dir("mnist_smoke");
  write_synthetic_mnist(dir, 600, 100, 3);
  int decreased = 0;
  for (int seed = 0; seed < 5; ++seed) {
    const RunConfig cfg = make_run_config({{"model", "smallcnn-adabin"},
                                           {"dataset", "mnist"},
                                           {"data_dir", dir},
                                           {"subset", "512"},
                                           {"epochs", "1"},
                                           {"batch", "8"},
                                           {"seed", std::to_string(seed)},
                                           {"out", dir + "/run" + std::to_string(seed)}});
    const DatasetPair data = prepare_data(cfg);
    REQUIRE(data.train.size() == 512);
    const TrainResult r = train(cfg, data);
    REQUIRE(r.history.size() == 1);
    CAPTURE(r.first_step_loss);
    CAPTURE(r.last_step_loss);
    decreased += r.last_step_loss < r.first_step_loss ? 1 : 0;
  }
  CHECK(decreased >= 4);
  fs::remove_all(dir);
}

TEST_CASE("training writes its artefacts and is deterministic") {
  Fixture fx;
  const RunConfig a = fx.config("a", 2), b = fx.config("b", 2);
  const TrainResult ra = train(a, fx.data);
  train(b, fx.data);
  for (const char* f : {"config.txt", "metrics.jsonl", "last.ckpt", "best.ckpt"}) {
    CHECK(fs::exists(fs::path(a.out) / f));
  }
  CHECK(slurp(fs::path(a.out) / "metrics.jsonl") == slurp(fs::path(b.out) / "metrics.jsonl"));
  CHECK(slurp(fs::path(a.out) / "config.txt") == a.to_text());

  std::istringstream lines(slurp(fs::path(a.out) / "metrics.jsonl"));
  int n = 0;
  for (std::string line; std::getline(lines, line); ++n) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["epoch"].get<int>() == n + 1);
    CHECK(j.contains("train_loss"));
    CHECK(j.contains("lr"));
    CHECK(j["layers"].size() == 4);
    CHECK(j["layers"][0].contains("alpha_a"));
  }
  CHECK(n == 2);

  // The snapshot config reproduces the run.
  const RunConfig snap = make_run_config(read_config_file((fs::path(a.out) / "config.txt").string()));
  CHECK(snap.to_text() == a.to_text());

  // Evaluating the final checkpoint reproduces the logged accuracy.
  const auto model = model_from_checkpoint(load_checkpoint((fs::path(a.out) / "last.ckpt").string()));
  CHECK(evaluate(*model, fx.data.test).top1 == ra.final_acc);
}

TEST_CASE("latent clipping bounds the binary-conv weights") {
  Fixture fx;
  RunConfig cfg = fx.config("clip", 1);
  cfg.latent_clip = 0.01f;
  train(cfg, fx.data);
  const auto model = model_from_checkpoint(load_checkpoint((fs::path(cfg.out) / "last.ckpt").string()));
  float widest = 0.0f;
  for (const BinaryConv2d* bc : model->binary_convs()) {
    for (float w : bc->weight.value.data()) widest = std::max(widest, std::fabs(w));
  }
  CHECK(widest <= 0.01f);
  CHECK(widest == doctest::Approx(0.01f));
}

TEST_CASE("resume continues bitwise") {
  Fixture fx;
  const RunConfig full = fx.config("full", 3);
  train(full, fx.data);

  const RunConfig part = fx.config("part", 3);
  TrainOptions first;
  first.stop_after = 1;
  train(part, fx.data, first);
  TrainOptions rest;
  rest.resume = true;
  const TrainResult r = train(part, fx.data, rest);
  CHECK(r.history.size() == 2);
  CHECK(r.history.front().epoch == 2);

  // Paths are part of the config; compare everything else.
  const std::string fm = slurp(fs::path(full.out) / "metrics.jsonl");
  CHECK(fm == slurp(fs::path(part.out) / "metrics.jsonl"));
  const auto cf = load_checkpoint((fs::path(full.out) / "last.ckpt").string());
  const auto cp = load_checkpoint((fs::path(part.out) / "last.ckpt").string());
  REQUIRE(cf.params.size() == cp.params.size());
  for (std::size_t i = 0; i < cf.params.size(); ++i) {
    CHECK(cf.params[i].value == cp.params[i].value);
    CHECK(cf.params[i].momentum == cp.params[i].momentum);
  }
  CHECK(cf.rng_state == cp.rng_state);

  // A changed config refuses to resume.
  RunConfig changed = part;
  changed.lr = 0.05f;
  CHECK_THROWS_AS(train(changed, fx.data, rest), ConfigError);
}

TEST_CASE("random-init accuracy sits at chance") {
  Fixture fx;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Model m(fx.config("x", 1).model_config(), seed);
    const EvalReport rep = evaluate(m, fx.data.test);
    CAPTURE(seed);
    CHECK(rep.top1 >= 0.05);
    CHECK(rep.top1 <= 0.20);
  }
}

TEST_CASE("evaluation report") {
  Fixture fx;
  Model m(fx.config("x", 1).model_config(), 1);
  const EvalReport rep = evaluate(m, fx.data.test, 30, true);
  CHECK(rep.count == 100);
  CHECK(rep.logits.shape() == Shape{100, 10});
  CHECK(rep.predictions.size() == 100);
  double correct = 0.0;
  for (std::size_t c = 0; c < 10; ++c) correct += rep.per_class[c] * static_cast<double>(rep.class_count[c]);
  CHECK(correct / 100.0 == doctest::Approx(rep.top1));
  CHECK(nlohmann::json::parse(rep.to_json())["top1"].get<double>() == doctest::Approx(rep.top1));

  // Batch size does not change the answer.
  CHECK(evaluate(m, fx.data.test, 7).predictions == rep.predictions);

  ModelConfig five = m.config();
  five.classes = 5;
  Model small(five, 0);
  CHECK_THROWS_AS(evaluate(small, fx.data.test), Error);
}
