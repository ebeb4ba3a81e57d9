#include "adabin/layers.hpp"

#include <cmath>

#include "adabin/error.hpp"

namespace adabin {

namespace {

Tensor kaiming_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
  for (float& v : t.data()) v = dist(rng);
  return t;
}

void require_nchw(const Tensor& x, std::size_t channels, const char* who) {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw ShapeError(std::string(who) + ": expected [N, " + std::to_string(channels) +
                     ", H, W], got " + shape_str(x.shape()));
  }
}

// Number of channels and spatial plane size for NCHW or [N, C] inputs.
std::pair<std::size_t, std::size_t> channel_layout(const Tensor& x, std::size_t channels,
                                                   const char* who) {
  if ((x.rank() != 4 && x.rank() != 2) || x.dim(1) != channels) {
    throw ShapeError(std::string(who) + ": expected channel dim " + std::to_string(channels) +
                     ", got " + shape_str(x.shape()));
  }
  const std::size_t plane = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  return {channels, plane};
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_c, std::size_t out_c, std::size_t k, ConvGeometry g, Rng& rng)
    : weight("weight", Role::Weight, kaiming_normal({out_c, in_c, k, k}, in_c * k * k, rng)),
      geom_(g) {}

Tensor Conv2d::forward(const Tensor& x, Mode) {
  input_ = x;
  return conv2d_ref(x, weight.value, geom_);
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  if (input_.empty()) throw Error(name_ + ": backward before forward");
  const Tensor gw = conv2d_backward_weight(grad_out, input_, weight.value.shape(), geom_);
  for (std::size_t i = 0; i < gw.numel(); ++i) weight.grad[i] += gw[i];
  return conv2d_backward_input(grad_out, weight.value, input_.shape(), geom_);
}

Shape Conv2d::output_shape(const Shape& in) const {
  const Shape& w = weight.value.shape();
  if (in.size() != 4 || in[1] != w[1]) {
    throw ShapeError(name_ + ": input " + shape_str(in) + " vs weight " + shape_str(w));
  }
  return {in[0], w[0], conv_out_extent(in[2], w[2], geom_), conv_out_extent(in[3], w[3], geom_)};
}

// ---------------------------------------------------------- BinaryConv2d

const char* weight_mode_name(WeightMode m) {
  switch (m) {
    case WeightMode::ScaledSign: return "scaled-sign";
    case WeightMode::Adabin: return "adabin";
    case WeightMode::AdabinLearnable: return "adabin-learnable";
  }
  return "?";
}

const char* activation_mode_name(ActivationMode m) {
  return m == ActivationMode::Sign ? "sign" : "adabin";
}

BinaryConv2d::BinaryConv2d(std::size_t in_c, std::size_t out_c, std::size_t k, ConvGeometry g,
                           WeightMode wmode, ActivationMode amode, AlphaGradMode grad_mode,
                           Rng& rng)
    : weight("weight", Role::Weight, kaiming_normal({out_c, in_c, k, k}, in_c * k * k, rng)),
      alpha_a("alpha_a", Role::QuantizerAlpha, Tensor({1}, 1.0f)),
      beta_a("beta_a", Role::QuantizerBeta, Tensor({1}, 0.0f)),
      geom_(g),
      wmode_(wmode),
      amode_(amode),
      grad_mode_(grad_mode) {
  if (wmode_ == WeightMode::AdabinLearnable) reset_learnable_weight_spec();
}

void BinaryConv2d::reset_learnable_weight_spec() {
  const BinarySpec s = equalize_weights(weight.value);
  const std::size_t n = s.size();
  std::vector<float> a = s.alpha;
  for (float& v : a) v = std::max(v, kAlphaEpsilon);
  alpha_w = Parameter(name_ + ".alpha_w", Role::QuantizerAlpha, Tensor({n}, std::move(a)));
  beta_w = Parameter(name_ + ".beta_w", Role::QuantizerBeta, Tensor({n}, s.beta));
}

void BinaryConv2d::rename() {
  weight.name = name_ + ".weight";
  alpha_a.name = name_ + ".alpha_a";
  beta_a.name = name_ + ".beta_a";
  alpha_w.name = name_ + ".alpha_w";
  beta_w.name = name_ + ".beta_w";
}

void BinaryConv2d::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  if (amode_ == ActivationMode::Adabin) {
    out.push_back(&alpha_a);
    out.push_back(&beta_a);
  }
  if (wmode_ == WeightMode::AdabinLearnable) {
    out.push_back(&alpha_w);
    out.push_back(&beta_w);
  }
}

BinarySpec BinaryConv2d::weight_spec() const {
  switch (wmode_) {
    case WeightMode::ScaledSign: return zero_center_weights(weight.value);
    case WeightMode::Adabin: return equalize_weights(weight.value);
    case WeightMode::AdabinLearnable:
      return BinarySpec::per_filter(alpha_w.value.storage(), beta_w.value.storage());
  }
  return {};
}

BinarySpec BinaryConv2d::activation_spec() const {
  if (amode_ == ActivationMode::Sign) return BinarySpec::scalar(1.0f, 0.0f);
  return BinarySpec::scalar(alpha_a.value[0], beta_a.value[0]);
}

Tensor BinaryConv2d::binarized_weight() const {
  return adabin_dequantize_only(weight.value, weight_spec());
}

Tensor BinaryConv2d::forward(const Tensor& x, Mode) {
  if (x.rank() != 4 || x.dim(1) != weight.value.dim(1)) {
    throw ShapeError(name_ + ": input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(weight.value.shape()));
  }
  wspec_ = weight_spec();
  weight_b_ = adabin_dequantize_only(weight.value, wspec_);
  act_b_ = adabin_dequantize_only(x, activation_spec());
  input_ = x;
  has_ctx_ = true;
  return conv2d_ref(act_b_, weight_b_, geom_);
}

Tensor BinaryConv2d::backward(const Tensor& grad_out) {
  if (!has_ctx_) throw Error(name_ + ": backward before forward");
  const Tensor g_ab = conv2d_backward_input(grad_out, weight_b_, input_.shape(), geom_);
  const Tensor g_wb = conv2d_backward_weight(grad_out, act_b_, weight.value.shape(), geom_);

  // Activations: clipped straight-through estimator.
  const BinarySpec as = activation_spec();
  Tensor g_x(input_.shape());
  const SteSums sa = ste_backward_span(g_ab.data(), input_.data(), as.alpha[0], as.beta[0],
                                       grad_mode_, g_x.data());
  if (amode_ == ActivationMode::Adabin) {
    alpha_a.grad[0] += static_cast<float>(sa.grad_alpha);
    beta_a.grad[0] += static_cast<float>(sa.grad_beta);
  }

  // Weights: alpha*sign((w-beta)/alpha)+beta with an identity STE collapses to
  // w, so the analytic modes pass the gradient straight through.
  if (wmode_ != WeightMode::AdabinLearnable) {
    for (std::size_t i = 0; i < g_wb.numel(); ++i) weight.grad[i] += g_wb[i];
  } else {
    const std::size_t n = weight.value.dim(0);
    const std::size_t per = weight.value.numel() / n;
    std::vector<float> gw(per);
    for (std::size_t f = 0; f < n; ++f) {
      const SteSums sw = ste_backward_span(
          g_wb.data().subspan(f * per, per), weight.value.data().subspan(f * per, per),
          wspec_.alpha[f], wspec_.beta[f], grad_mode_, gw);
      for (std::size_t i = 0; i < per; ++i) weight.grad[f * per + i] += gw[i];
      alpha_w.grad[f] += static_cast<float>(sw.grad_alpha);
      beta_w.grad[f] += static_cast<float>(sw.grad_beta);
    }
  }
  return g_x;
}

Shape BinaryConv2d::output_shape(const Shape& in) const {
  const Shape& w = weight.value.shape();
  if (in.size() != 4 || in[1] != w[1]) {
    throw ShapeError(name_ + ": input " + shape_str(in) + " vs weight " + shape_str(w));
  }
  return {in[0], w[0], conv_out_extent(in[2], w[2], geom_), conv_out_extent(in[3], w[3], geom_)};
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(std::size_t channels, float momentum, float eps)
    : gamma("gamma", Role::BatchNorm, Tensor({channels}, 1.0f)),
      beta("beta", Role::BatchNorm, Tensor({channels}, 0.0f)),
      running_mean({channels}, 0.0f),
      running_var({channels}, 1.0f),
      channels_(channels),
      momentum_(momentum),
      eps_(eps) {}

void BatchNorm2d::rename() {
  gamma.name = name_ + ".gamma";
  beta.name = name_ + ".beta";
}

void BatchNorm2d::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

void BatchNorm2d::collect_buffers(std::vector<Buffer>& out) {
  out.push_back({name_ + ".running_mean", &running_mean});
  out.push_back({name_ + ".running_var", &running_var});
}

void BatchNorm2d::folded(std::vector<float>& scale, std::vector<float>& shift) const {
  scale.resize(channels_);
  shift.resize(channels_);
  for (std::size_t c = 0; c < channels_; ++c) {
    const float inv = 1.0f / std::sqrt(running_var[c] + eps_);
    scale[c] = gamma.value[c] * inv;
    shift[c] = beta.value[c] - running_mean[c] * scale[c];
  }
}

Tensor batchnorm_affine(const Tensor& x, std::span<const float> scale,
                        std::span<const float> shift) {
  require_nchw(x, scale.size(), "batchnorm");
  const std::size_t c = scale.size(), hw = x.dim(2) * x.dim(3);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t ch = (i / hw) % c;
    y[i] = x[i] * scale[ch] + shift[ch];
  }
  return y;
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
  require_nchw(x, channels_, "batchnorm2d");
  const std::size_t n = x.dim(0), hw = x.dim(2) * x.dim(3);
  const double count = static_cast<double>(n * hw);
  xhat_ = Tensor(x.shape());
  inv_std_.assign(channels_, 0.0f);
  last_mode_ = mode;
  if (mode == Mode::Eval) {
    for (std::size_t c = 0; c < channels_; ++c) {
      const float inv = 1.0f / std::sqrt(running_var[c] + eps_);
      inv_std_[c] = inv;
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * channels_ + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) xhat_[off + i] = (x[off + i] - running_mean[c]) * inv;
      }
    }
    std::vector<float> scale, shift;
    folded(scale, shift);
    return batchnorm_affine(x, scale, shift);
  }
  Tensor y(x.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    double s = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const float* p = x.data().data() + (b * channels_ + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) s += p[i];
    }
    const double m = s / count;
    double sq = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const float* p = x.data().data() + (b * channels_ + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) sq += (p[i] - m) * (p[i] - m);
    }
    const float mean = static_cast<float>(m);
    const float var = static_cast<float>(sq / count);
    const float unbiased = count > 1 ? static_cast<float>(sq / (count - 1)) : var;
    running_mean[c] = (1.0f - momentum_) * running_mean[c] + momentum_ * mean;
    running_var[c] = (1.0f - momentum_) * running_var[c] + momentum_ * unbiased;
    const float inv = 1.0f / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    const float g = gamma.value[c], bt = beta.value[c];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * channels_ + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const float xh = (x[off + i] - mean) * inv;
        xhat_[off + i] = xh;
        y[off + i] = g * xh + bt;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  if (xhat_.empty()) throw Error(name_ + ": backward before forward");
  if (grad_out.shape() != xhat_.shape()) throw ShapeError(name_ + ": grad shape mismatch");
  const std::size_t n = grad_out.dim(0), hw = grad_out.dim(2) * grad_out.dim(3);
  const double count = static_cast<double>(n * hw);
  Tensor gx(grad_out.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * channels_ + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        sum_g += grad_out[off + i];
        sum_gx += static_cast<double>(grad_out[off + i]) * xhat_[off + i];
      }
    }
    gamma.grad[c] += static_cast<float>(sum_gx);
    beta.grad[c] += static_cast<float>(sum_g);
    const float g = gamma.value[c], inv = inv_std_[c];
    if (last_mode_ == Mode::Eval) {
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * channels_ + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) gx[off + i] = grad_out[off + i] * g * inv;
      }
      continue;
    }
    // d xhat = g * dy; dx = inv/M * (M dxhat - sum dxhat - xhat sum(dxhat xhat))
    const double mean_dxh = g * sum_g / count;
    const double mean_dxh_xh = g * sum_gx / count;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * channels_ + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double dxh = static_cast<double>(grad_out[off + i]) * g;
        gx[off + i] = static_cast<float>(inv * (dxh - mean_dxh - xhat_[off + i] * mean_dxh_xh));
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------- Maxout

Maxout::Maxout(std::size_t channels, bool learn_plus, bool learn_minus, float init_plus,
               float init_minus)
    : gamma_plus("gamma_plus", Role::MaxoutGamma, Tensor({channels}, init_plus)),
      gamma_minus("gamma_minus", Role::MaxoutGamma, Tensor({channels}, init_minus)),
      channels_(channels),
      learn_plus_(learn_plus),
      learn_minus_(learn_minus) {}

void Maxout::rename() {
  gamma_plus.name = name_ + ".gamma_plus";
  gamma_minus.name = name_ + ".gamma_minus";
}

void Maxout::collect_parameters(std::vector<Parameter*>& out) {
  if (learn_plus_) out.push_back(&gamma_plus);
  if (learn_minus_) out.push_back(&gamma_minus);
}

Tensor maxout_apply(const Tensor& x, std::span<const float> gamma_plus,
                    std::span<const float> gamma_minus) {
  const auto [c, plane] = channel_layout(x, gamma_plus.size(), "maxout");
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t ch = (i / plane) % c;
    y[i] = x[i] >= 0.0f ? gamma_plus[ch] * x[i] : gamma_minus[ch] * x[i];
  }
  return y;
}

Tensor Maxout::forward(const Tensor& x, Mode) {
  input_ = x;
  return maxout_apply(x, gamma_plus.value.data(), gamma_minus.value.data());
}

Tensor Maxout::backward(const Tensor& grad_out) {
  if (input_.empty()) throw Error(name_ + ": backward before forward");
  const auto [c, plane] = channel_layout(grad_out, channels_, "maxout");
  Tensor gx(grad_out.shape());
  std::vector<double> gp(c, 0.0), gm(c, 0.0);
  for (std::size_t i = 0; i < grad_out.numel(); ++i) {
    const std::size_t ch = (i / plane) % c;
    const float x = input_[i];
    if (x >= 0.0f) {
      gx[i] = grad_out[i] * gamma_plus.value[ch];
      gp[ch] += static_cast<double>(grad_out[i]) * x;
    } else {
      gx[i] = grad_out[i] * gamma_minus.value[ch];
      gm[ch] += static_cast<double>(grad_out[i]) * x;
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (learn_plus_) gamma_plus.grad[ch] += static_cast<float>(gp[ch]);
    if (learn_minus_) gamma_minus.grad[ch] += static_cast<float>(gm[ch]);
  }
  return gx;
}

// ------------------------------------------------------------- AvgPool2d

Shape AvgPool2d::output_shape(const Shape& in) const {
  if (in.size() != 4) throw ShapeError("avgpool2d: expected NCHW, got " + shape_str(in));
  const ConvGeometry g{stride_, 0};
  return {in[0], in[1], conv_out_extent(in[2], k_, g), conv_out_extent(in[3], k_, g)};
}

Tensor AvgPool2d::forward(const Tensor& x, Mode) {
  const Shape os = output_shape(x.shape());
  in_shape_ = x.shape();
  Tensor y(os);
  const float inv = 1.0f / static_cast<float>(k_ * k_);
  for (std::size_t b = 0; b < os[0]; ++b)
    for (std::size_t c = 0; c < os[1]; ++c)
      for (std::size_t oy = 0; oy < os[2]; ++oy)
        for (std::size_t ox = 0; ox < os[3]; ++ox) {
          float s = 0.0f;
          for (std::size_t ky = 0; ky < k_; ++ky)
            for (std::size_t kx = 0; kx < k_; ++kx)
              s += x.at(b, c, oy * stride_ + ky, ox * stride_ + kx);
          y.at(b, c, oy, ox) = s * inv;
        }
  return y;
}

Tensor AvgPool2d::backward(const Tensor& grad_out) {
  if (in_shape_.empty()) throw Error("avgpool2d: backward before forward");
  Tensor gx(in_shape_);
  const Shape& os = grad_out.shape();
  const float inv = 1.0f / static_cast<float>(k_ * k_);
  for (std::size_t b = 0; b < os[0]; ++b)
    for (std::size_t c = 0; c < os[1]; ++c)
      for (std::size_t oy = 0; oy < os[2]; ++oy)
        for (std::size_t ox = 0; ox < os[3]; ++ox) {
          const float g = grad_out.at(b, c, oy, ox) * inv;
          for (std::size_t ky = 0; ky < k_; ++ky)
            for (std::size_t kx = 0; kx < k_; ++kx)
              gx.at(b, c, oy * stride_ + ky, ox * stride_ + kx) += g;
        }
  return gx;
}

// --------------------------------------------------------- GlobalAvgPool

Shape GlobalAvgPool::output_shape(const Shape& in) const {
  if (in.size() != 4) throw ShapeError("global_avgpool: expected NCHW, got " + shape_str(in));
  return {in[0], in[1], 1, 1};
}

Tensor GlobalAvgPool::forward(const Tensor& x, Mode) {
  in_shape_ = x.shape();
  return global_avg_pool(x);
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avgpool: expected NCHW, got " + shape_str(x.shape()));
  const Shape os{x.dim(0), x.dim(1), 1, 1};
  const std::size_t hw = x.dim(2) * x.dim(3);
  Tensor y(os);
  for (std::size_t i = 0; i < os[0] * os[1]; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += x[i * hw + j];
    y[i] = static_cast<float>(s / static_cast<double>(hw));
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  if (in_shape_.empty()) throw Error("global_avgpool: backward before forward");
  Tensor gx(in_shape_);
  const std::size_t hw = in_shape_[2] * in_shape_[3];
  const float inv = 1.0f / static_cast<float>(hw);
  for (std::size_t i = 0; i < in_shape_[0] * in_shape_[1]; ++i)
    for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] = grad_out[i] * inv;
  return gx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight("weight", Role::Weight, Tensor({out, in})),
      bias("bias", Role::Weight, Tensor({out})),
      in_(in),
      out_(out) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : weight.value.data()) v = dist(rng);
  for (float& v : bias.value.data()) v = dist(rng);
}

void Linear::rename() {
  weight.name = name_ + ".weight";
  bias.name = name_ + ".bias";
}

void Linear::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Shape Linear::output_shape(const Shape& in) const {
  if (in.empty() || shape_numel(in) != in[0] * in_) {
    throw ShapeError("linear: input " + shape_str(in) + " does not flatten to [N, " +
                     std::to_string(in_) + "]");
  }
  return {in[0], out_};
}

Tensor linear_apply(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const std::size_t out = weight.dim(0), in = weight.dim(1);
  if (x.empty() || x.numel() != x.dim(0) * in || bias.numel() != out) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t n = x.dim(0);
  Tensor y({n, out});
  for (std::size_t b = 0; b < n; ++b) {
    const float* xr = x.data().data() + b * in;
    for (std::size_t o = 0; o < out; ++o) {
      const float* wr = weight.data().data() + o * in;
      double s = bias[o];
      for (std::size_t i = 0; i < in; ++i) s += static_cast<double>(wr[i]) * xr[i];
      y[b * out + o] = static_cast<float>(s);
    }
  }
  return y;
}

Tensor Linear::forward(const Tensor& x, Mode) {
  output_shape(x.shape());
  in_shape_ = x.shape();
  input_ = x;
  return linear_apply(x, weight.value, bias.value);
}

Tensor Linear::backward(const Tensor& grad_out) {
  if (input_.empty()) throw Error(name_ + ": backward before forward");
  const std::size_t n = in_shape_[0];
  Tensor gx(in_shape_);
  for (std::size_t b = 0; b < n; ++b) {
    const float* xr = input_.data().data() + b * in_;
    for (std::size_t o = 0; o < out_; ++o) {
      const float g = grad_out[b * out_ + o];
      bias.grad[o] += g;
      float* gw = weight.grad.data().data() + o * in_;
      const float* wr = weight.value.data().data() + o * in_;
      for (std::size_t i = 0; i < in_; ++i) {
        gw[i] += g * xr[i];
        gx[b * in_ + i] += g * wr[i];
      }
    }
  }
  return gx;
}

// -------------------------------------------------------------- Shortcut

Shape Shortcut::output_shape(const Shape& in) const {
  if (in.size() != 4 || in[1] != in_channels) {
    throw ShapeError("shortcut: expected " + std::to_string(in_channels) + " channels, got " +
                     shape_str(in));
  }
  if (out_channels < in_channels) throw ShapeError("shortcut cannot reduce channels");
  if (stride == 1) return {in[0], out_channels, in[2], in[3]};
  return {in[0], out_channels, in[2] / stride, in[3] / stride};
}

Tensor Shortcut::forward(const Tensor& x) const {
  if (is_identity()) return x;
  const Shape os = output_shape(x.shape());
  Tensor y(os);
  const std::size_t lo = pad_front();
  const float inv = 1.0f / static_cast<float>(stride * stride);
  for (std::size_t b = 0; b < os[0]; ++b)
    for (std::size_t c = 0; c < in_channels; ++c)
      for (std::size_t oy = 0; oy < os[2]; ++oy)
        for (std::size_t ox = 0; ox < os[3]; ++ox) {
          float s = 0.0f;
          for (std::size_t ky = 0; ky < stride; ++ky)
            for (std::size_t kx = 0; kx < stride; ++kx)
              s += x.at(b, c, oy * stride + ky, ox * stride + kx);
          y.at(b, c + lo, oy, ox) = s * inv;
        }
  return y;
}

Tensor Shortcut::backward(const Tensor& grad_out, const Shape& in_shape) const {
  if (is_identity()) return grad_out;
  Tensor gx(in_shape);
  const Shape& os = grad_out.shape();
  const std::size_t lo = pad_front();
  const float inv = 1.0f / static_cast<float>(stride * stride);
  for (std::size_t b = 0; b < os[0]; ++b)
    for (std::size_t c = 0; c < in_channels; ++c)
      for (std::size_t oy = 0; oy < os[2]; ++oy)
        for (std::size_t ox = 0; ox < os[3]; ++ox) {
          const float g = grad_out.at(b, c + lo, oy, ox) * inv;
          for (std::size_t ky = 0; ky < stride; ++ky)
            for (std::size_t kx = 0; kx < stride; ++kx)
              gx.at(b, c, oy * stride + ky, ox * stride + kx) += g;
        }
  return gx;
}

// ---------------------------------------------------------- ResidualUnit

ResidualUnit::ResidualUnit(std::unique_ptr<Layer> conv, std::unique_ptr<BatchNorm2d> bn,
                           std::unique_ptr<Layer> act, Shortcut sc, bool use_shortcut)
    : conv_(std::move(conv)),
      bn_(std::move(bn)),
      act_(std::move(act)),
      sc_(sc),
      use_shortcut_(use_shortcut) {}

void ResidualUnit::rename() {
  conv_->set_name(name_ + ".conv");
  bn_->set_name(name_ + ".bn");
  if (act_) act_->set_name(name_ + ".act");
}

void ResidualUnit::collect_parameters(std::vector<Parameter*>& out) {
  conv_->collect_parameters(out);
  bn_->collect_parameters(out);
  if (act_) act_->collect_parameters(out);
}

void ResidualUnit::collect_buffers(std::vector<Buffer>& out) {
  conv_->collect_buffers(out);
  bn_->collect_buffers(out);
}

Shape ResidualUnit::output_shape(const Shape& in) const {
  const Shape body = bn_->output_shape(conv_->output_shape(in));
  if (use_shortcut_ && sc_.output_shape(in) != body) {
    throw ShapeError(name_ + ": shortcut " + shape_str(sc_.output_shape(in)) +
                     " does not match body " + shape_str(body));
  }
  return body;
}

Tensor ResidualUnit::forward(const Tensor& x, Mode mode) {
  in_shape_ = x.shape();
  Tensor y = bn_->forward(conv_->forward(x, mode), mode);
  if (use_shortcut_) {
    const Tensor s = sc_.forward(x);
    if (s.shape() != y.shape()) {
      throw ShapeError(name_ + ": shortcut " + shape_str(s.shape()) + " vs body " +
                       shape_str(y.shape()));
    }
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += s[i];
  }
  return act_ ? act_->forward(y, mode) : y;
}

Tensor ResidualUnit::backward(const Tensor& grad_out) {
  if (in_shape_.empty()) throw Error(name_ + ": backward before forward");
  const Tensor g_sum = act_ ? act_->backward(grad_out) : grad_out;
  Tensor gx = conv_->backward(bn_->backward(g_sum));
  if (use_shortcut_) {
    const Tensor gs = sc_.backward(g_sum, in_shape_);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gs[i];
  }
  return gx;
}

}  // namespace adabin
