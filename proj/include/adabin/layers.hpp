#pragma once

#include <memory>
#include <random>
#include <vector>

#include "adabin/autograd.hpp"
#include "adabin/quantize.hpp"

namespace adabin {

using Rng = std::mt19937_64;

// Stateless forward kernels shared by the training graph and the packed
// inference engine, so both compute bit-identical float stages.
Tensor batchnorm_affine(const Tensor& x, std::span<const float> scale,
                        std::span<const float> shift);
Tensor maxout_apply(const Tensor& x, std::span<const float> gamma_plus,
                    std::span<const float> gamma_minus);
Tensor global_avg_pool(const Tensor& x);
/// x is [N, in] or [N, in, 1, 1]; returns [N, out].
Tensor linear_apply(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Real-valued convolution without bias.
class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_c, std::size_t out_c, std::size_t k, ConvGeometry g, Rng& rng);

  const char* kind() const override { return "conv2d"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  void collect_parameters(std::vector<Parameter*>& out) override { out.push_back(&weight); }

  const ConvGeometry& geometry() const noexcept { return geom_; }

  Parameter weight;

 protected:
  void rename() override { weight.name = name_ + ".weight"; }

 private:
  ConvGeometry geom_;
  Tensor input_;
};

enum class WeightMode { ScaledSign, Adabin, AdabinLearnable };
enum class ActivationMode { Sign, Adabin };

const char* weight_mode_name(WeightMode m);
const char* activation_mode_name(ActivationMode m);

/// Convolution over binarized activations and binarized weights. Training
/// runs a float convolution of the dequantized operands.
class BinaryConv2d final : public Layer {
 public:
  BinaryConv2d(std::size_t in_c, std::size_t out_c, std::size_t k, ConvGeometry g,
               WeightMode wmode, ActivationMode amode, AlphaGradMode grad_mode, Rng& rng);

  const char* kind() const override { return "binary_conv2d"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;

  /// Current weight spec: derived from the latent weights, or the learnable
  /// parameters in AdabinLearnable mode.
  BinarySpec weight_spec() const;
  BinarySpec activation_spec() const;
  Tensor binarized_weight() const;

  /// Re-derives the learnable weight spec from the current latent weights.
  void reset_learnable_weight_spec();

  const ConvGeometry& geometry() const noexcept { return geom_; }
  WeightMode weight_mode() const noexcept { return wmode_; }
  ActivationMode activation_mode() const noexcept { return amode_; }
  AlphaGradMode alpha_grad_mode() const noexcept { return grad_mode_; }
  void set_alpha_grad_mode(AlphaGradMode m) noexcept { grad_mode_ = m; }

  Parameter weight;      // latent real weights [n, c, k, k]
  Parameter alpha_a;     // [1], init 1
  Parameter beta_a;      // [1], init 0
  Parameter alpha_w;     // [n], AdabinLearnable only
  Parameter beta_w;      // [n], AdabinLearnable only

 protected:
  void rename() override;

 private:
  ConvGeometry geom_;
  WeightMode wmode_;
  ActivationMode amode_;
  AlphaGradMode grad_mode_;
  Tensor input_;
  Tensor act_b_;
  Tensor weight_b_;
  BinarySpec wspec_;
  bool has_ctx_ = false;
};

class BatchNorm2d final : public Layer {
 public:
  explicit BatchNorm2d(std::size_t channels, float momentum = 0.1f, float eps = 1e-5f);

  const char* kind() const override { return "batchnorm2d"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& in) const override { return in; }
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<Buffer>& out) override;

  /// Eval-mode affine form y = scale * x + shift per channel.
  void folded(std::vector<float>& scale, std::vector<float>& shift) const;

  std::size_t channels() const noexcept { return channels_; }
  float eps() const noexcept { return eps_; }

  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;

 protected:
  void rename() override;

 private:
  std::size_t channels_;
  float momentum_;
  float eps_;
  Mode last_mode_ = Mode::Eval;
  Tensor xhat_;
  std::vector<float> inv_std_;
};

/// Per-channel two-slope map: gamma_plus * x for x >= 0, gamma_minus * x
/// otherwise. Either slope may be frozen (not trained).
class Maxout final : public Layer {
 public:
  Maxout(std::size_t channels, bool learn_plus, bool learn_minus, float init_plus = 1.0f,
         float init_minus = 0.25f);

  const char* kind() const override { return "maxout"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& in) const override { return in; }
  void collect_parameters(std::vector<Parameter*>& out) override;

  bool learns_plus() const noexcept { return learn_plus_; }
  bool learns_minus() const noexcept { return learn_minus_; }
  std::size_t channels() const noexcept { return channels_; }

  Parameter gamma_plus;
  Parameter gamma_minus;

 protected:
  void rename() override;

 private:
  std::size_t channels_;
  bool learn_plus_, learn_minus_;
  Tensor input_;
};

class AvgPool2d final : public Layer {
 public:
  AvgPool2d(std::size_t k, std::size_t stride) : k_(k), stride_(stride) {}

  const char* kind() const override { return "avgpool2d"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& in) const override;

  std::size_t kernel() const noexcept { return k_; }
  std::size_t stride() const noexcept { return stride_; }

 private:
  std::size_t k_, stride_;
  Shape in_shape_;
};

/// NCHW -> [N, C, 1, 1] mean over the spatial plane.
class GlobalAvgPool final : public Layer {
 public:
  const char* kind() const override { return "global_avgpool"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& in) const override;

 private:
  Shape in_shape_;
};

/// y = x W^T + b on [N, in] (or [N, in, 1, 1]) inputs.
class Linear final : public Layer {
 public:
  Linear(std::size_t in, std::size_t out, Rng& rng);

  const char* kind() const override { return "linear"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;

  std::size_t in_features() const noexcept { return in_; }
  std::size_t out_features() const noexcept { return out_; }

  Parameter weight;  // [out, in]
  Parameter bias;    // [out]

 protected:
  void rename() override;

 private:
  std::size_t in_, out_;
  Tensor input_;
  Shape in_shape_;
};

/// Parameter-free shortcut: identity, or avg-pool by `stride` followed by
/// zero channel padding when the unit changes width.
struct Shortcut {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;

  bool is_identity() const noexcept { return stride == 1 && in_channels == out_channels; }
  std::size_t pad_front() const noexcept { return (out_channels - in_channels) / 2; }
  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& grad_out, const Shape& in_shape) const;
  Shape output_shape(const Shape& in) const;
};

/// act(bn(conv(x)) + shortcut(x)). The shortcut can be disabled.
class ResidualUnit final : public Layer {
 public:
  ResidualUnit(std::unique_ptr<Layer> conv, std::unique_ptr<BatchNorm2d> bn,
               std::unique_ptr<Layer> act, Shortcut sc, bool use_shortcut = true);

  const char* kind() const override { return "residual_unit"; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_buffers(std::vector<Buffer>& out) override;

  Layer& conv() noexcept { return *conv_; }
  const Layer& conv() const noexcept { return *conv_; }
  BatchNorm2d& bn() noexcept { return *bn_; }
  const BatchNorm2d& bn() const noexcept { return *bn_; }
  Layer* act() noexcept { return act_.get(); }
  const Layer* act() const noexcept { return act_.get(); }
  const Shortcut& shortcut() const noexcept { return sc_; }
  bool uses_shortcut() const noexcept { return use_shortcut_; }
  void set_use_shortcut(bool on) noexcept { use_shortcut_ = on; }

 protected:
  void rename() override;

 private:
  std::unique_ptr<Layer> conv_;
  std::unique_ptr<BatchNorm2d> bn_;
  std::unique_ptr<Layer> act_;
  Shortcut sc_;
  bool use_shortcut_;
  Shape in_shape_;
};

}  // namespace adabin
