#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "adabin/bits.hpp"
#include "adabin/tensor.hpp"

namespace adabin {

/// Sum over valid lanes of the +-1 product:
/// 2 * popcount(~(a ^ w) & mask) - popcount(mask).
int xnor_popcount_dot(std::span<const std::uint64_t> a, std::span<const std::uint64_t> w,
                      std::span<const std::uint64_t> mask);

/// Scalars of one binary convolution: per-filter weight spec and the
/// layer activation spec.
struct PackedConvSpecs {
  std::vector<float> alpha_w;
  std::vector<float> beta_w;
  float alpha_a = 1.0f;
  float beta_a = 0.0f;
};

/// Geometry of a packed convolution, including the input plane so the
/// border classes of the bias can be enumerated.
struct PackedGeometry {
  ConvGeometry conv;
  std::size_t in_height = 0;
  std::size_t in_width = 0;
};

/// Weight-only part of the convolution, beta_a * sum(w_b) over the taps a
/// window actually covers.
///
/// Output rows fall into a few classes by which kernel rows lie inside the
/// zero-padded input (likewise columns); each (row class, column class)
/// pair has one entry per filter. The all-taps class is the interior value.
struct PrecomputedBias {
  struct Range {
    std::size_t lo = 0, hi = 0;  // valid kernel taps [lo, hi)
    friend bool operator==(const Range&, const Range&) = default;
  };

  std::size_t filters = 0;
  std::vector<float> interior;          // [filters]
  std::vector<Range> row_ranges;        // distinct kernel-row ranges
  std::vector<Range> col_ranges;        // distinct kernel-column ranges
  std::vector<std::uint32_t> row_class; // [out_h]
  std::vector<std::uint32_t> col_class; // [out_w]
  std::vector<float> table;             // [row class][col class][filter]

  float at(std::size_t oy, std::size_t ox, std::size_t f) const noexcept {
    return table[(row_class[oy] * col_ranges.size() + col_class[ox]) * filters + f];
  }
  std::size_t taps(std::size_t oy, std::size_t ox) const noexcept {
    const Range& r = row_ranges[row_class[oy]];
    const Range& c = col_ranges[col_class[ox]];
    return (r.hi - r.lo) * (c.hi - c.lo);
  }
};

PrecomputedBias precompute_bias(const PackedBitTensor& w_bits, std::span<const float> alpha_w,
                                std::span<const float> beta_w, float beta_a,
                                const PackedGeometry& geom);

/// y[n, oy, ox] = alpha_a * alpha_w[n] * D + alpha_a * beta_w[n] * S + T
/// with D the XNOR/popcount dot over the window, S the sum of +-1 activation
/// bits over the window (shared by all filters) and T the precomputed bias.
/// Taps in the zero padding contribute nothing to any term.
Tensor binary_conv_packed(const PackedBitTensor& a_bits, const PackedBitTensor& w_bits,
                          const PackedConvSpecs& specs, const ConvGeometry& geom,
                          const PrecomputedBias* bias = nullptr);

}  // namespace adabin
