#include "adabin/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "adabin/error.hpp"
#include "adabin/quantize.hpp"

namespace adabin {

const char* role_name(Role r) {
  switch (r) {
    case Role::Weight: return "weight";
    case Role::QuantizerAlpha: return "quantizer-alpha";
    case Role::QuantizerBeta: return "quantizer-beta";
    case Role::MaxoutGamma: return "maxout-gamma";
    case Role::BatchNorm: return "batchnorm";
  }
  return "unknown";
}

Parameter::Parameter(std::string n, Role r, Tensor init)
    : name(std::move(n)), role(r), value(std::move(init)) {
  grad = Tensor(value.shape());
  momentum = Tensor(value.shape());
}

void Parameter::zero_grad() { grad.fill(0.0f); }

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

LossOutput softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 && !(logits.rank() == 4 && logits.dim(2) == 1 && logits.dim(3) == 1)) {
    throw ShapeError("cross-entropy expects [N, classes] logits, got " +
                     shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("cross-entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n));
  }
  LossOutput out{0.0, Tensor(logits.shape())};
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw Error("label " + std::to_string(labels[i]) + " out of range [0, " +
                  std::to_string(k) + ")");
    }
    const float* row = logits.data().data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z) + mx;
    out.loss += log_z - row[labels[i]];
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(row[j] - log_z);
      const double t = static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0;
      out.grad_logits[i * k + j] = static_cast<float>((p - t) / static_cast<double>(n));
    }
  }
  out.loss /= static_cast<double>(n);
  return out;
}

void sgd_step(std::span<Parameter* const> params, const SgdOptions& opt) {
  if (opt.lr < 0.0f) throw Error("learning rate must be >= 0");
  for (Parameter* p : params) {
    const bool decay = p->role == Role::Weight && opt.weight_decay != 0.0f;
    auto& v = p->momentum.storage();
    auto& x = p->value.storage();
    const auto& g = p->grad.storage();
    for (std::size_t i = 0; i < x.size(); ++i) {
      float gi = g[i];
      if (decay) gi += opt.weight_decay * x[i];
      v[i] = opt.momentum * v[i] + gi;
      x[i] -= opt.lr * v[i];
    }
    if (p->role == Role::QuantizerAlpha) {
      for (float& a : x) a = std::max(a, kAlphaEpsilon);
    }
  }
}

float cosine_lr(int epoch, int total_epochs, float lr0) {
  if (total_epochs <= 0) throw Error("total_epochs must be positive");
  if (epoch < 0 || epoch >= total_epochs) {
    throw Error("epoch " + std::to_string(epoch) + " outside [0, " +
                std::to_string(total_epochs) + ")");
  }
  const double t = static_cast<double>(epoch) / total_epochs;
  return static_cast<float>(0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * t)));
}

}  // namespace adabin
