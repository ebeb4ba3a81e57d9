#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adabin/model.hpp"

namespace adabin {

/// Operation/parameter accounting for one layer at batch size 1.
///
/// Conventions:
///  - a multiply-accumulate is 2 ops, so a float conv costs 2*n*c*k^2*h'*w'
///    FLOPs and its binary counterpart the same number of BOPs;
///  - OPs = FLOPs + BOPs / 64;
///  - sign-binary conv: one float multiply per output element for the
///    per-filter scale, n*c*k^2 weight bits plus 32 bits per filter scale;
///  - adabin conv adds, on top of sign-binary:
///      * the S term: one masked popcount per input pixel and channel bit
///        (c*h'*w' BOPs, assuming stride-1 extents), k^2 integer adds per
///        output position to sum the window, then one multiply and one add
///        per output element,
///      * the T term: nothing; it is a per-filter constant (per border
///        class) that is added together with the batch-norm shift,
///      * 32 bits per filter for beta_w and 64 bits for (alpha_a, beta_a).
///  - batch-norm, Maxout/PReLU, pooling, shortcut adds and the classifier
///    are float ops; batch-norm stores a folded (scale, shift) pair.
struct LayerCost {
  std::uint64_t float_ops = 0;
  std::uint64_t binary_ops = 0;
  std::uint64_t params_bits = 0;
  std::uint64_t extra_float_ops = 0;
  std::uint64_t extra_binary_ops = 0;
  std::uint64_t extra_param_bits = 0;

  double ops() const noexcept;
  double extra_ops() const noexcept;
  std::uint64_t total_param_bits() const noexcept { return params_bits + extra_param_bits; }

  LayerCost& operator+=(const LayerCost& o) noexcept;
  friend bool operator==(const LayerCost&, const LayerCost&) = default;
};

enum class ConvCostMode { Float, SignBinary, Adabin };

LayerCost conv_cost(std::size_t n, std::size_t c, std::size_t k, std::size_t out_h,
                    std::size_t out_w, ConvCostMode mode);

struct NamedCost {
  std::string name;
  std::string kind;
  LayerCost cost;
  LayerCost float_equivalent;  ///< same layer in the all-float network
};

struct ModelCostReport {
  std::string model_id;
  std::vector<NamedCost> layers;
  LayerCost total;
  LayerCost float_total;
  double total_ops = 0.0;        ///< FLOPs + BOPs/64 (+ extras)
  double float_model_ops = 0.0;  ///< all-float network FLOPs
  double speedup = 1.0;
  double memory_saving = 1.0;
  double params_bytes = 0.0;
};

ModelCostReport model_cost(const Model& model);

/// The canonical single-layer comparison against a sign-binary conv of the
/// same shape (n = c = 256, k = 3, h' = w' = 14 unless overridden).
struct OverheadClaims {
  double extra_ops_pct = 0.0;
  double extra_params_pct = 0.0;
  double speedup = 0.0;
  double memory_saving = 0.0;
};

OverheadClaims adabin_overhead(std::size_t n = 256, std::size_t c = 256, std::size_t k = 3,
                               std::size_t out_h = 14, std::size_t out_w = 14);

}  // namespace adabin
