// Acceptance harness: one PASS/FAIL line per criterion, exit status 1 when
// any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "adabin/bitkernel.hpp"
#include "adabin/bundle.hpp"
#include "adabin/config.hpp"
#include "adabin/costmodel.hpp"
#include "adabin/quantize.hpp"
#include "adabin/train.hpp"
#include "test_util.hpp"

using namespace adabin;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1. Packed kernel against the float reference over the full geometry grid.
Outcome kernel_parity() {
  const std::vector<std::size_t> sizes = {1, 2, 3, 4, 5, 6, 7, 8, 64, 65};
  testutil::Rng rng(1);
  std::uniform_int_distribution<std::size_t> hw(3, 7);
  std::uniform_real_distribution<float> ad(0.2f, 2.0f), bd(-1.0f, 1.0f);
  int geometries = 0;
  double worst = 0.0;
  for (std::size_t n : sizes)
    for (std::size_t c : sizes)
      for (std::size_t k : {1u, 3u})
        for (std::size_t stride : {1u, 2u})
          for (std::size_t pad : {0u, 1u}) {
            const std::size_t h = hw(rng), w = hw(rng);
            const Tensor x = testutil::random_tensor({1, c, h, w}, rng, -2.0f, 2.0f);
            const Tensor wt = testutil::random_tensor({n, c, k, k}, rng);
            const BinarySpec ws = equalize_weights(wt);
            const BinarySpec as = BinarySpec::scalar(ad(rng), bd(rng));
            const BinarizedPair a = adabin_quantize(x, as);
            const BinarizedPair b = adabin_quantize(wt, ws);
            const ConvGeometry g{stride, pad};
            const Tensor packed =
                binary_conv_packed(a.bits, b.bits, {ws.alpha, ws.beta, as.alpha[0], as.beta[0]}, g);
            const Tensor ref = conv2d_ref(a.dequantized, b.dequantized, g);
            worst = std::max(worst, testutil::max_rel_err(packed.data(), ref.data()));
            ++geometries;
          }
  return {geometries >= 300 && worst <= 1e-4,
          fmt("%d geometries, max relative error %.3g (tol 1e-4)", geometries, worst)};
}

double surrogate(double a, double alpha, double beta) {
  return alpha * std::clamp((a - beta) / alpha, -1.0, 1.0) + beta;
}

// 2. Gradient suite.
Outcome gradients() {
  testutil::Rng rng(2);
  std::uniform_real_distribution<double> ad(0.05, 2.0), bd(-1.0, 1.0), ud(-2.5, 2.5), rd(-1.0, 1.0);
  int points = 0, act_bad = 0;
  while (points < 1000) {
    const double alpha = ad(rng), beta = bd(rng), u = ud(rng), r = rd(rng);
    if (std::fabs(std::fabs(u) - 1.0) < 1e-4) continue;
    const float a = static_cast<float>(beta + alpha * u);
    const float fa = static_cast<float>(alpha), fb = static_cast<float>(beta);
    const float up = static_cast<float>(r);
    float gx = 0.0f;
    const SteSums s = ste_backward_span({&up, 1}, {&a, 1}, fa, fb, AlphaGradMode::Consistent, {&gx, 1});
    const double h = 1e-6;
    const double dx = r * (surrogate(a + h, fa, fb) - surrogate(a - h, fa, fb)) / (2 * h);
    const double dal = r * (surrogate(a, fa + h, fb) - surrogate(a, fa - h, fb)) / (2 * h);
    const double dbe = r * (surrogate(a, fa, fb + h) - surrogate(a, fa, fb - h)) / (2 * h);
    act_bad += !testutil::grad_close(gx, dx, 1e-4) + !testutil::grad_close(s.grad_alpha, dal, 1e-4) +
               !testutil::grad_close(s.grad_beta, dbe, 1e-4);
    ++points;
  }

  int layer_bad = 0, layers = 0;
  Rng init(3);
  auto check = [&](Layer& l, const Tensor& x, Mode mode) {
    layer_bad += testutil::layer_fd(l, x, mode, 1e-2, 1e-3, rng);
    ++layers;
  };
  Maxout mo(3, true, true);
  mo.gamma_plus.value = Tensor({3}, {1.2f, 0.7f, 1.0f});
  mo.gamma_minus.value = Tensor({3}, {0.25f, -0.3f, 0.6f});
  Tensor mx = testutil::random_tensor({2, 3, 4, 4}, rng);
  for (float& v : mx.data()) {
    if (std::fabs(v) < 0.05f) v += v < 0.0f ? -0.05f : 0.05f;
  }
  check(mo, mx, Mode::Train);
  Conv2d conv(2, 3, 3, {2, 1}, init);
  check(conv, testutil::random_tensor({2, 2, 5, 5}, rng), Mode::Train);
  BatchNorm2d bn(3);
  bn.running_var = testutil::random_tensor({3}, rng, 0.5f, 2.0f);
  check(bn, testutil::random_tensor({2, 3, 3, 3}, rng), Mode::Eval);
  check(bn, testutil::random_tensor({2, 3, 3, 3}, rng), Mode::Train);
  Linear fc(6, 4, init);
  check(fc, testutil::random_tensor({3, 6}, rng), Mode::Train);
  AvgPool2d pool(2, 2);
  check(pool, testutil::random_tensor({1, 2, 4, 4}, rng), Mode::Train);
  GlobalAvgPool gap;
  check(gap, testutil::random_tensor({2, 3, 3, 3}, rng), Mode::Train);

  return {act_bad == 0 && layer_bad == 0,
          fmt("binarizer: %d/%d points outside 1e-4; maxout + %d float layer checks: %d entries "
              "outside 1e-3",
              act_bad, points, layers - 1, layer_bad)};
}

// 3. Weight equalization.
Outcome equalization() {
  testutil::Rng rng(4);
  double mean_err = 0.0, std_err = 0.0, equiv_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor w = testutil::random_tensor({8, 4, 3, 3}, rng, -2.0f, 3.0f);
    const BinarySpec s = equalize_weights(w);
    for (std::size_t f = 0; f < 8; ++f) {
      double m = 0.0, v = 0.0;
      for (std::size_t i = 0; i < 36; ++i) m += w[f * 36 + i];
      m /= 36.0;
      for (std::size_t i = 0; i < 36; ++i) v += std::pow(w[f * 36 + i] - m, 2);
      const double sd = std::sqrt(v / 36.0);
      mean_err = std::max(mean_err, std::fabs(s.beta[f] - m));
      std_err = std::max(std_err, std::fabs(s.alpha[f] - sd) / sd);
    }
    // Power-of-two scaling and a shift.
    Tensor t(w.shape());
    for (std::size_t i = 0; i < w.numel(); ++i) t[i] = 4.0f * w[i] + 0.5f;
    const BinarySpec st = equalize_weights(t);
    for (std::size_t f = 0; f < 8; ++f) {
      equiv_err = std::max(equiv_err, std::fabs(st.alpha[f] - 4.0 * s.alpha[f]) / (4.0 * s.alpha[f]));
      equiv_err = std::max(equiv_err, std::fabs(st.beta[f] - (4.0 * s.beta[f] + 0.5)) /
                                          std::max(1.0, std::fabs(4.0 * s.beta[f] + 0.5)));
    }
  }

  Tensor g({100000});
  std::normal_distribution<float> nd(0.0f, 1.0f);
  for (float& v : g.data()) v = nd(rng);
  const BinarySpec eq = equalize_weights(g.reshaped({1, 100000}));
  double best_alpha = 0.0, best_kl = 1e300;
  for (int i = 0; i <= 150; ++i) {
    const float a = 0.25f + 0.01f * static_cast<float>(i);
    const double kl = kld_numeric(g, BinarySpec::scalar(a, eq.beta[0]), 512);
    if (kl < best_kl) {
      best_kl = kl;
      best_alpha = a;
    }
  }
  const bool pass = mean_err <= 1e-6 && std_err <= 1e-6 && equiv_err <= 1e-6 &&
                    std::fabs(best_alpha - eq.alpha[0]) <= 0.15;
  return {pass, fmt("mean err %.2g, std rel err %.2g, equivariance err %.2g, KLD minimiser alpha "
                    "%.2f vs equalised %.4f (tol 0.15)",
                    mean_err, std_err, equiv_err, best_alpha, eq.alpha[0])};
}

// 4. Cost model.
Outcome costs() {
  const OverheadClaims oc = adabin_overhead();
  const bool pass = std::fabs(oc.extra_ops_pct - 2.74) <= 0.2 &&
                    std::fabs(oc.extra_params_pct - 1.37) <= 0.1 &&
                    std::fabs(oc.speedup - 60.85) <= 1.5 && std::fabs(oc.memory_saving - 31.0) <= 1.0;
  return {pass, fmt("extra ops %.3f%% (2.74 +-0.2), extra params %.3f%% (1.37 +-0.1), speedup %.2f "
                    "(60.85 +-1.5), memory %.2f (31 +-1)",
                    oc.extra_ops_pct, oc.extra_params_pct, oc.speedup, oc.memory_saving)};
}

// 5. Output alphabet of one tap.
Outcome alphabet() {
  Tensor act({1, 1, 8, 8});
  for (std::size_t i = 0; i < act.numel(); ++i) act[i] = i % 2 ? 1.5f : -0.7f;
  auto products = [&](const BinarySpec& as, float w_lo, float w_hi) {
    std::set<float> out;
    const Tensor ab = adabin_dequantize_only(act, as);
    for (float wb : {w_lo, w_hi}) {
      const Tensor y = conv2d_ref(ab, Tensor({1, 1, 1, 1}, {wb}), {1, 0});
      for (float v : y.data()) out.insert(v);
    }
    return out;
  };
  const BinarySpec as = BinarySpec::scalar(0.8f, 0.3f);
  const std::set<float> four = products(as, 0.2f - 0.9f, 0.2f + 0.9f);
  const std::set<float> two = products(BinarySpec::scalar(1.0f, 0.0f), -1.0f, 1.0f);
  const bool pass = four.size() == 4 && two == std::set<float>{-1.0f, 1.0f};
  return {pass, fmt("%zu distinct products with general specs (want 4), unit specs give %zu values "
                    "{-1,+1}=%s",
                    four.size(), two.size(), two == std::set<float>{-1.0f, 1.0f} ? "yes" : "no")};
}

RunConfig synthetic_run(const std::string& data, const std::string& out, std::uint64_t seed) {
  return make_run_config({{"model", "smallcnn-adabin"},
                          {"width", "0.5"},
                          {"epochs", "2"},
                          {"batch", "32"},
                          {"seed", std::to_string(seed)},
                          {"cifar_records", "0"},
                          {"data_dir", data},
                          {"out", out}});
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

// 7. Export parity and bundle size.
Outcome export_parity(const std::string& root) {
  const std::string data = root + "/cifar";
  const RunConfig cfg = synthetic_run(data, root + "/export", 0);
  const DatasetPair d = prepare_data(cfg);
  train(cfg, d);
  const auto model = model_from_checkpoint(load_checkpoint(cfg.out + "/last.ckpt"));
  const std::string path = cfg.out + "/model.adbn";
  save_bundle(export_packed_model(*model), path);
  const PackedModel pm = load_bundle(path);
  const EvalReport graph = evaluate(*model, d.test);
  const EvalReport packed = evaluate_packed(pm, d.test);
  std::size_t same = 0;
  for (std::size_t i = 0; i < graph.predictions.size(); ++i) same += graph.predictions[i] == packed.predictions[i];

  const Model r20(model_config_from_id("resnet20-adabin"), 0);
  const double bytes = static_cast<double>(serialize_bundle(export_packed_model(r20)).size());
  const double predicted = model_cost(r20).params_bytes;
  const double dev = std::fabs(bytes / predicted - 1.0);
  const bool pass = graph.count == 1000 && same == graph.count && dev <= 0.05;
  return {pass, fmt("%zu/%zu identical top-1 (graph %.3f, bundle %.3f); resnet20-adabin bundle %.0f B "
                    "vs predicted %.0f B (%.2f%%, tol 5%%)",
                    same, graph.count, graph.top1, packed.top1, bytes, predicted, 100.0 * dev)};
}

// 8. Determinism of the metrics log.
Outcome determinism(const std::string& root) {
  const std::string data = root + "/cifar";
  std::string logs[2];
  for (int i = 0; i < 2; ++i) {
    const RunConfig cfg = synthetic_run(data, root + "/det" + std::to_string(i), 7);
    train(cfg, prepare_data(cfg));
    logs[i] = slurp(fs::path(cfg.out) / "metrics.jsonl");
  }
  const bool pass = !logs[0].empty() && logs[0] == logs[1];
  return {pass, fmt("two runs with seed 7: metrics logs %s (%zu bytes)",
                    logs[0] == logs[1] ? "identical" : "differ", logs[0].size())};
}

}  // namespace

int main() {
  const std::string root = testutil::temp_dir("acceptance");
  write_synthetic_cifar10(root + "/cifar", 200, 1000, 2024);

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "kernel parity", kernel_parity},
      {2, "gradient suite", gradients},
      {3, "weight equalization", equalization},
      {4, "cost model", costs},
      {5, "output alphabet", alphabet},
      {7, "export parity", [&] { return export_parity(root); }},
      {8, "determinism", [&] { return determinism(root); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("criterion 6 (accuracy ordering) runs in acceptance_accuracy\n");
  fs::remove_all(root);
  return failed ? 1 : 0;
}
