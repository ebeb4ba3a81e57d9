#include <cmath>

#include "adabin/error.hpp"
#include "adabin/layers.hpp"
#include "adabin/model.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace adabin;

namespace {

Tensor away_from_zero(const Shape& s, testutil::Rng& rng, float margin) {
  Tensor t = testutil::random_tensor(s, rng);
  for (float& v : t.data()) {
    if (std::fabs(v) < margin) v = v < 0.0f ? v - margin : v + margin;
  }
  return t;
}

float sign_of(float v) { return v >= 0.0f ? 1.0f : -1.0f; }

}  // namespace

TEST_CASE("maxout values") {
  Maxout m(1, true, true);
  const Tensor y = m.forward(Tensor({1, 1, 1, 2}, {-4.0f, 2.0f}), Mode::Eval);
  CHECK(y.storage() == std::vector<float>{-1.0f, 2.0f});

  m.gamma_minus.value[0] = 1.0f;
  const Tensor x({1, 1, 2, 2}, {-3.0f, -0.5f, 0.0f, 7.0f});
  CHECK(m.forward(x, Mode::Eval).storage() == x.storage());

  m.gamma_minus.value[0] = 0.0f;
  CHECK(m.forward(x, Mode::Eval).storage() == std::vector<float>{0.0f, 0.0f, 0.0f, 7.0f});

  // Per-channel slopes.
  Maxout two(2, true, true);
  two.gamma_minus.value = Tensor({2}, {0.5f, 0.1f});
  two.gamma_plus.value = Tensor({2}, {2.0f, 3.0f});
  const Tensor y2 = two.forward(Tensor({1, 2, 1, 2}, {-2.0f, 1.0f, -10.0f, 1.0f}), Mode::Eval);
  CHECK(y2.storage() == std::vector<float>{-1.0f, 2.0f, -1.0f, 3.0f});
}

TEST_CASE("maxout gradient at zero uses the positive slope") {
  Maxout m(1, true, true);
  m.gamma_plus.value[0] = 2.0f;
  m.forward(Tensor({1, 1, 1, 1}, {0.0f}), Mode::Train);
  const Tensor g = m.backward(Tensor({1, 1, 1, 1}, {1.0f}));
  CHECK(g[0] == 2.0f);
}

TEST_CASE("maxout finite differences") {
  testutil::Rng rng(31);
  Maxout m(3, true, true);
  m.gamma_plus.value = Tensor({3}, {1.2f, 0.7f, 1.0f});
  m.gamma_minus.value = Tensor({3}, {0.25f, -0.3f, 0.6f});
  for (int trial = 0; trial < 5; ++trial) {
    CHECK(testutil::layer_fd(m, away_from_zero({2, 3, 4, 4}, rng, 0.05f), Mode::Train, 1e-2, 1e-4, rng) == 0);
  }
}

TEST_CASE("frozen maxout slopes are not registered") {
  Maxout prelu(4, false, true);
  std::vector<Parameter*> p;
  prelu.collect_parameters(p);
  REQUIRE(p.size() == 1);
  CHECK(p[0] == &prelu.gamma_minus);
  CHECK(p[0]->role == Role::MaxoutGamma);
  Maxout pos(4, true, false, 1.0f, 1.0f);
  p.clear();
  pos.collect_parameters(p);
  REQUIRE(p.size() == 1);
  CHECK(p[0] == &pos.gamma_plus);
}

TEST_CASE("batchnorm") {
  BatchNorm2d bn(2);
  const Tensor constant({3, 2, 2, 2}, 4.5f);
  const Tensor centred = bn.forward(constant, Mode::Train);
  for (float v : centred.data()) CHECK(v == 0.0f);
  // Running mean moved by momentum 0.1 toward 4.5.
  CHECK(bn.running_mean[0] == doctest::Approx(0.45));
  CHECK(bn.running_var[0] == doctest::Approx(0.9));

  // Fresh layer in eval mode uses mean 0, var 1.
  BatchNorm2d fresh(1);
  const Tensor y = fresh.forward(Tensor({1, 1, 1, 2}, {1.0f, -2.0f}), Mode::Eval);
  CHECK(y[0] == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)));
  CHECK(y[1] == doctest::Approx(-2.0 / std::sqrt(1.0 + 1e-5)));

  CHECK_THROWS_AS(bn.forward(Tensor({1, 3, 2, 2}), Mode::Train), ShapeError);
}

TEST_CASE("batchnorm folded form matches eval mode") {
  testutil::Rng rng(5);
  BatchNorm2d bn(3);
  bn.gamma.value = testutil::random_tensor({3}, rng, 0.5f, 2.0f);
  bn.beta.value = testutil::random_tensor({3}, rng);
  bn.running_mean = testutil::random_tensor({3}, rng);
  bn.running_var = testutil::random_tensor({3}, rng, 0.2f, 3.0f);
  const Tensor x = testutil::random_tensor({2, 3, 3, 3}, rng);
  const Tensor y = bn.forward(x, Mode::Eval);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t c = (i / 9) % 3;
    const double ref = bn.gamma.value[c] * (x[i] - bn.running_mean[c]) /
                           std::sqrt(static_cast<double>(bn.running_var[c]) + 1e-5) +
                       bn.beta.value[c];
    CHECK(y[i] == doctest::Approx(ref).epsilon(1e-5));
  }
}

TEST_CASE("pooling and linear") {
  AvgPool2d pool(2, 2);
  CHECK(pool.forward(Tensor({1, 1, 2, 2}, {1, 3, 5, 7}), Mode::Eval)[0] == 4.0f);
  GlobalAvgPool gap;
  const Tensor g = gap.forward(Tensor({1, 2, 1, 2}, {1, 3, 10, 20}), Mode::Eval);
  CHECK(g.shape() == Shape{1, 2, 1, 1});
  CHECK(g.storage() == std::vector<float>{2.0f, 15.0f});

  Rng rng(1);
  Linear fc(3, 3, rng);
  fc.weight.value = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  fc.bias.value.fill(0.0f);
  const Tensor x({2, 3}, {0.5f, -1.0f, 2.0f, 3.0f, 4.0f, -5.0f});
  CHECK(fc.forward(x, Mode::Eval).storage() == x.storage());
  CHECK_THROWS_AS(fc.forward(Tensor({2, 4}), Mode::Eval), ShapeError);
}

TEST_CASE("float layers pass finite differences") {
  testutil::Rng rng(41);
  Rng init(2);
  SUBCASE("conv") {
    Conv2d conv(2, 3, 3, {2, 1}, init);
    CHECK(testutil::layer_fd(conv, testutil::random_tensor({2, 2, 5, 5}, rng), Mode::Train, 1e-2, 1e-3, rng) == 0);
  }
  SUBCASE("batchnorm eval") {
    BatchNorm2d bn(3);
    bn.running_mean = testutil::random_tensor({3}, rng);
    bn.running_var = testutil::random_tensor({3}, rng, 0.5f, 2.0f);
    CHECK(testutil::layer_fd(bn, testutil::random_tensor({2, 3, 3, 3}, rng), Mode::Eval, 1e-2, 1e-3, rng) == 0);
  }
  SUBCASE("batchnorm train") {
    BatchNorm2d bn(2);
    bn.gamma.value = Tensor({2}, {1.5f, 0.5f});
    CHECK(testutil::layer_fd(bn, testutil::random_tensor({3, 2, 3, 3}, rng), Mode::Train, 1e-2, 1e-3, rng) == 0);
  }
  SUBCASE("linear") {
    Linear fc(6, 4, init);
    CHECK(testutil::layer_fd(fc, testutil::random_tensor({3, 6}, rng), Mode::Train, 1e-2, 1e-3, rng) == 0);
  }
  SUBCASE("pooling") {
    AvgPool2d pool(2, 2);
    CHECK(testutil::layer_fd(pool, testutil::random_tensor({1, 2, 4, 4}, rng), Mode::Train, 1e-2, 1e-3, rng) == 0);
    GlobalAvgPool gap;
    CHECK(testutil::layer_fd(gap, testutil::random_tensor({2, 3, 3, 3}, rng), Mode::Train, 1e-2, 1e-3, rng) == 0);
  }
  SUBCASE("residual unit with a float body") {
    ResidualUnit unit(std::make_unique<Conv2d>(2, 4, 3, ConvGeometry{2, 1}, init),
                      std::make_unique<BatchNorm2d>(4), nullptr, Shortcut{2, 4, 2});
    CHECK(testutil::layer_fd(unit, testutil::random_tensor({2, 2, 4, 4}, rng), Mode::Eval, 1e-2, 1e-3, rng) == 0);
  }
}

TEST_CASE("shortcut pads channels symmetrically") {
  const Shortcut sc{2, 4, 2};
  const Tensor x({1, 2, 2, 2}, {1, 3, 5, 7, 2, 2, 2, 2});
  const Tensor y = sc.forward(x);
  CHECK(y.shape() == Shape{1, 4, 1, 1});
  CHECK(y.storage() == std::vector<float>{0.0f, 4.0f, 2.0f, 0.0f});
  CHECK(Shortcut{3, 3, 1}.is_identity());
}

TEST_CASE("model structure") {
  const Model r20(model_config_from_id("resnet20-adabin"), 0);
  CHECK(r20.binary_convs().size() == 18);
  std::size_t float_convs = 0, linears = 0;
  for (const auto& l : r20.layers()) {
    if (auto* u = dynamic_cast<const ResidualUnit*>(l.get())) {
      if (dynamic_cast<const Conv2d*>(&u->conv())) ++float_convs;
    }
    if (dynamic_cast<const Linear*>(l.get())) ++linears;
  }
  CHECK(float_convs == 1);
  CHECK(linears == 1);

  const Model small(model_config_from_id("smallcnn-adabin"), 0);
  CHECK(small.binary_convs().size() == 4);

  ModelConfig all_binary = model_config_from_id("resnet20-adabin");
  all_binary.float_first = false;
  all_binary.float_last = false;
  CHECK(Model(all_binary, 0).binary_convs().size() == 20);

  const Model sp(model_config_from_id("resnet20-sign-prelu"), 0);
  for (const BinaryConv2d* bc : sp.binary_convs()) {
    CHECK(bc->weight_mode() == WeightMode::ScaledSign);
    CHECK(bc->activation_mode() == ActivationMode::Sign);
    for (float b : bc->weight_spec().beta) CHECK(b == 0.0f);
  }
  CHECK(sp.config().id() == "resnet20-sign-prelu");

  const Model fl(model_config_from_id("smallcnn-float"), 0);
  CHECK(fl.binary_convs().empty());
}

TEST_CASE("unknown architecture ids list the valid ones") {
  try {
    model_config_from_id("resnet18-adabin");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("resnet18-adabin") != std::string::npos);
    for (const auto& id : valid_model_ids()) CHECK(msg.find(id) != std::string::npos);
  }
  CHECK_THROWS_AS(model_config_from_id("smallcnn"), ConfigError);
}

TEST_CASE("binary conv training forward reduces to a scaled XNOR conv") {
  testutil::Rng rng(17);
  Rng init(3);
  BinaryConv2d bc(4, 3, 3, {1, 1}, WeightMode::ScaledSign, ActivationMode::Adabin,
                  AlphaGradMode::Consistent, init);
  const Tensor x = testutil::random_tensor({2, 4, 5, 5}, rng);
  const Tensor y = bc.forward(x, Mode::Eval);
  Tensor sx(x.shape()), sw(bc.weight.value.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) sx[i] = sign_of(x[i]);
  for (std::size_t i = 0; i < sw.numel(); ++i) sw[i] = sign_of(bc.weight.value[i]);
  const auto ref = testutil::naive_conv(sx, sw, 1, 1);
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const std::size_t f = (i / 25) % 3;
    double sq = 0.0;
    for (std::size_t j = 0; j < 36; ++j) sq += std::pow(bc.weight.value[f * 36 + j], 2);
    CHECK(y[i] == doctest::Approx(std::sqrt(sq / 36.0) * ref[i]).epsilon(1e-5));
  }
}

// Value-level comparison of the whole network against an XNOR-style
// re-implementation from the same latent weights.
TEST_CASE("network forward equals an XNOR baseline when specs are forced") {
  for (auto amode : {ActivationMode::Sign, ActivationMode::Adabin}) {
    ModelConfig cfg = model_config_from_id("smallcnn-adabin");
    cfg.weight = WeightMode::ScaledSign;
    cfg.activation = amode;
    cfg.width = 0.5;
    cfg.in_height = cfg.in_width = 8;
    Model model(cfg, 12);
    testutil::Rng rng(13);
    for (auto& l : model.layers()) {
      if (auto* u = dynamic_cast<ResidualUnit*>(l.get())) {
        BatchNorm2d& bn = u->bn();
        bn.running_mean = testutil::random_tensor({bn.channels()}, rng, -0.2f, 0.2f);
        bn.running_var = testutil::random_tensor({bn.channels()}, rng, 0.5f, 2.0f);
      }
    }
    const Tensor x = testutil::random_tensor({2, 3, 8, 8}, rng);
    const Tensor out = model.forward(x, Mode::Eval);

    Tensor h = x;
    for (auto& l : model.layers()) {
      if (auto* u = dynamic_cast<ResidualUnit*>(l.get())) {
        Tensor body;
        if (auto* bc = dynamic_cast<BinaryConv2d*>(&u->conv())) {
          const Tensor& w = bc->weight.value;
          const std::size_t n = w.dim(0), per = w.numel() / n;
          Tensor sx(h.shape()), sw(w.shape());
          for (std::size_t i = 0; i < h.numel(); ++i) sx[i] = sign_of(h[i]);
          for (std::size_t f = 0; f < n; ++f) {
            double sq = 0.0;
            for (std::size_t j = 0; j < per; ++j) sq += std::pow(w[f * per + j], 2);
            const float a = static_cast<float>(std::sqrt(sq / static_cast<double>(per)));
            for (std::size_t j = 0; j < per; ++j) sw[f * per + j] = a * sign_of(w[f * per + j]);
          }
          const auto v = testutil::naive_conv(sx, sw, bc->geometry().stride, bc->geometry().pad);
          body = Tensor({h.dim(0), n, conv_out_extent(h.dim(2), 3, bc->geometry()),
                         conv_out_extent(h.dim(3), 3, bc->geometry())});
          for (std::size_t i = 0; i < v.size(); ++i) body[i] = static_cast<float>(v[i]);
        } else {
          auto& conv = dynamic_cast<Conv2d&>(u->conv());
          const auto v = testutil::naive_conv(h, conv.weight.value, 1, 1);
          body = Tensor({h.dim(0), conv.weight.value.dim(0), h.dim(2), h.dim(3)});
          for (std::size_t i = 0; i < v.size(); ++i) body[i] = static_cast<float>(v[i]);
        }
        const BatchNorm2d& bn = u->bn();
        const std::size_t C = body.dim(1), plane = body.dim(2) * body.dim(3);
        for (std::size_t i = 0; i < body.numel(); ++i) {
          const std::size_t c = (i / plane) % C;
          body[i] = static_cast<float>(bn.gamma.value[c] * (body[i] - bn.running_mean[c]) /
                                           std::sqrt(static_cast<double>(bn.running_var[c]) + 1e-5) +
                                       bn.beta.value[c]);
        }
        if (u->uses_shortcut()) {
          const Tensor s = u->shortcut().forward(h);
          for (std::size_t i = 0; i < body.numel(); ++i) body[i] += s[i];
        }
        auto* mo = dynamic_cast<Maxout*>(u->act());
        REQUIRE(mo != nullptr);
        for (std::size_t i = 0; i < body.numel(); ++i) {
          const std::size_t c = (i / plane) % C;
          body[i] *= body[i] >= 0.0f ? mo->gamma_plus.value[c] : mo->gamma_minus.value[c];
        }
        h = body;
      } else if (dynamic_cast<GlobalAvgPool*>(l.get())) {
        const std::size_t N = h.dim(0), C = h.dim(1), plane = h.dim(2) * h.dim(3);
        Tensor p({N, C});
        for (std::size_t b = 0; b < N; ++b)
          for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < plane; ++j) s += h[(b * C + c) * plane + j];
            p[b * C + c] = static_cast<float>(s / static_cast<double>(plane));
          }
        h = p;
      } else {
        auto& fc = dynamic_cast<Linear&>(*l);
        const std::size_t N = h.dim(0), in = fc.in_features(), outf = fc.out_features();
        Tensor y({N, outf});
        for (std::size_t b = 0; b < N; ++b)
          for (std::size_t o = 0; o < outf; ++o) {
            double s = fc.bias.value[o];
            for (std::size_t j = 0; j < in; ++j) s += static_cast<double>(fc.weight.value[o * in + j]) * h[b * in + j];
            y[b * outf + o] = static_cast<float>(s);
          }
        h = y;
      }
    }
    CHECK(testutil::max_rel_err(out.data(), h.data()) <= 1e-5);
  }
}

TEST_CASE("removing a shortcut changes the output") {
  ModelConfig cfg = model_config_from_id("smallcnn-adabin");
  cfg.width = 0.5;
  cfg.in_height = cfg.in_width = 8;
  Model model(cfg, 4);
  testutil::Rng rng(6);
  const Tensor x = testutil::random_tensor({2, 3, 8, 8}, rng);
  const Tensor with = model.forward(x, Mode::Eval);
  for (auto& l : model.layers()) {
    if (auto* u = dynamic_cast<ResidualUnit*>(l.get())) u->set_use_shortcut(false);
  }
  const Tensor without = model.forward(x, Mode::Eval);
  CHECK(with.storage() != without.storage());
}

TEST_CASE("model forward shape errors") {
  Model model(model_config_from_id("smallcnn-float"), 0);
  CHECK_THROWS_AS(model.forward(Tensor({1, 1, 32, 32}), Mode::Eval), ShapeError);
  CHECK_THROWS_AS(model.backward(), Error);
}
