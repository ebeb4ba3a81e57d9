#pragma once

#include <span>
#include <vector>

#include "adabin/bits.hpp"
#include "adabin/tensor.hpp"

namespace adabin {

/// Smallest distance an activation binary set may have.
inline constexpr float kAlphaEpsilon = 1e-3f;

enum class Granularity { PerOutputFilter, PerLayerScalar };

/// Center/half-distance pair(s) of a binary set {beta - alpha, beta + alpha}.
struct BinarySpec {
  std::vector<float> alpha;
  std::vector<float> beta;
  Granularity granularity = Granularity::PerLayerScalar;

  static BinarySpec scalar(float alpha, float beta);
  static BinarySpec per_filter(std::vector<float> alpha, std::vector<float> beta);

  std::size_t size() const noexcept { return alpha.size(); }
  float lower(std::size_t i = 0) const { return beta[i] - alpha[i]; }
  float upper(std::size_t i = 0) const { return beta[i] + alpha[i]; }
};

struct BinarizedPair {
  Tensor dequantized;
  PackedBitTensor bits;
};

/// out = beta - alpha where x < beta, beta + alpha where x >= beta.
BinarizedPair adabin_quantize(const Tensor& x, const BinarySpec& spec);

/// Value-only variant of adabin_quantize for the training path.
Tensor adabin_dequantize_only(const Tensor& x, const BinarySpec& spec);

/// Per-filter weight equalization: beta = filter mean, alpha = population
/// standard deviation of the filter.
BinarySpec equalize_weights(const Tensor& w);

/// Weight spec with the center pinned at zero and alpha = RMS of the filter
/// (the {-alpha, +alpha} baseline).
BinarySpec zero_center_weights(const Tensor& w);

enum class AlphaGradMode {
  Consistent,  ///< exact derivative of the Htanh/Sign surrogate
  Paper,       ///< -(a / alpha) g'(u) term, as printed
};

struct ActivationContext {
  Tensor input;
  float alpha = 1.0f;
  float beta = 0.0f;
  bool valid = false;
};

BinarizedPair activation_binarize_forward(const Tensor& a, const BinarySpec& spec,
                                          ActivationContext* ctx);

struct ActivationGrads {
  Tensor grad_input;
  double grad_alpha = 0.0;
  double grad_beta = 0.0;
};

/// Clipped straight-through backward of the activation binarizer.
ActivationGrads activation_binarize_backward(const Tensor& upstream, const ActivationContext& ctx,
                                             AlphaGradMode mode);

struct SteSums {
  double grad_alpha = 0.0;
  double grad_beta = 0.0;
};

/// Kernel of activation_binarize_backward over one contiguous run sharing a
/// single (alpha, beta). Writes dL/dx into grad_x and returns the parameter
/// gradients.
SteSums ste_backward_span(std::span<const float> upstream, std::span<const float> x, float alpha,
                          float beta, AlphaGradMode mode, std::span<float> grad_x);

/// Discretized KL(P_real || P_binary). Both the sample histogram and the
/// two-spike binary histogram (mass 0.5 per spike) are smoothed with the same
/// Gaussian kernel whose width is the sample standard deviation, with a
/// 1e-12 floor per bin. Used for diagnostics and tests only.
double kld_numeric(const Tensor& samples, const BinarySpec& spec, int bins);

}  // namespace adabin
