#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "adabin/tensor.hpp"

namespace adabin {

enum class Role : std::uint8_t {
  Weight = 0,
  QuantizerAlpha = 1,
  QuantizerBeta = 2,
  MaxoutGamma = 3,
  BatchNorm = 4,
};

const char* role_name(Role r);

/// Trainable leaf: value, accumulated gradient and momentum buffer.
struct Parameter {
  std::string name;
  Role role = Role::Weight;
  Tensor value;
  Tensor grad;
  Tensor momentum;

  Parameter() = default;
  Parameter(std::string name, Role role, Tensor init);

  void zero_grad();
};

/// Non-trainable state that still has to survive a checkpoint (batch-norm
/// running statistics).
struct Buffer {
  std::string name;
  Tensor* tensor;
};

enum class Mode { Train, Eval };

/// One node of the static layer graph. forward() saves whatever backward()
/// needs; backward() accumulates into parameter gradients and returns the
/// gradient with respect to the layer input.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual const char* kind() const = 0;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual Shape output_shape(const Shape& in) const = 0;

  virtual void collect_parameters(std::vector<Parameter*>& /*out*/) {}
  virtual void collect_buffers(std::vector<Buffer>& /*out*/) {}

  /// Prefix applied to parameter and buffer names.
  void set_name(std::string n) { name_ = std::move(n); rename(); }
  const std::string& name() const noexcept { return name_; }

 protected:
  virtual void rename() {}
  std::string name_;
};

struct LossOutput {
  double loss = 0.0;
  Tensor grad_logits;  // d(loss)/d(logits), already divided by the batch size
};

/// Mean softmax cross-entropy over the batch. logits is [N, classes] or
/// [N, classes, 1, 1].
LossOutput softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

struct SgdOptions {
  float lr = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
};

/// v <- momentum * v + grad (+ wd * value for Role::Weight);
/// value <- value - lr * v; quantizer alphas are clamped to kAlphaEpsilon.
void sgd_step(std::span<Parameter* const> params, const SgdOptions& opt);

/// 0.5 * lr0 * (1 + cos(pi * epoch / total_epochs)).
float cosine_lr(int epoch, int total_epochs, float lr0);

void zero_grads(std::span<Parameter* const> params);

}  // namespace adabin
