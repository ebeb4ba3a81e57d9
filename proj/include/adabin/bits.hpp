#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "adabin/tensor.hpp"

namespace adabin {

/// 1-bit tensor, +1 -> bit 1, -1 -> bit 0.
///
/// The logical shape is viewed as (outer, channels, inner): for rank >= 2
/// `outer` is dim 0, `channels` is dim 1 and `inner` is the product of the
/// remaining dims; a rank-1 tensor is a single run of channels. Each
/// (outer, inner) site owns `words_per_site()` consecutive 64-bit words
/// holding its channels, LSB = lowest channel index. Channel padding bits
/// are always 0. The validity mask has the same per-site word layout and is
/// identical for every site, so it is stored once.
class PackedBitTensor {
 public:
  PackedBitTensor() = default;
  explicit PackedBitTensor(Shape logical);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t outer() const noexcept { return outer_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t inner() const noexcept { return inner_; }
  std::size_t words_per_site() const noexcept { return wps_; }
  std::size_t sites() const noexcept { return outer_ * inner_; }

  std::span<const std::uint64_t> words() const noexcept { return words_; }
  std::span<std::uint64_t> words() noexcept { return words_; }
  std::span<const std::uint64_t> mask() const noexcept { return mask_; }

  std::span<const std::uint64_t> site(std::size_t outer, std::size_t inner) const noexcept {
    return {words_.data() + (outer * inner_ + inner) * wps_, wps_};
  }

  bool get(std::size_t outer, std::size_t channel, std::size_t inner) const noexcept {
    const std::uint64_t w = words_[(outer * inner_ + inner) * wps_ + channel / 64];
    return (w >> (channel % 64)) & 1u;
  }
  void set(std::size_t outer, std::size_t channel, std::size_t inner, bool on) noexcept {
    std::uint64_t& w = words_[(outer * inner_ + inner) * wps_ + channel / 64];
    const std::uint64_t bit = std::uint64_t{1} << (channel % 64);
    w = on ? (w | bit) : (w & ~bit);
  }

  /// Element in flat row-major logical order.
  bool get_flat(std::size_t flat) const noexcept;
  void set_flat(std::size_t flat, bool on) noexcept;

  /// Number of +1 elements.
  std::size_t count_ones() const noexcept;

  friend bool operator==(const PackedBitTensor&, const PackedBitTensor&) = default;

 private:
  Shape shape_;
  std::size_t outer_ = 0, channels_ = 0, inner_ = 0, wps_ = 0;
  std::vector<std::uint64_t> words_;
  std::vector<std::uint64_t> mask_;
};

/// Packs a tensor whose elements are all exactly -1 or +1.
PackedBitTensor pack(const Tensor& signs);

/// Packs the predicate x >= threshold. `thresholds` has one entry, or one
/// entry per index of dim 0.
PackedBitTensor pack_ge(const Tensor& x, std::span<const float> thresholds);

/// Inverse of pack: a tensor of -1/+1 values.
Tensor unpack(const PackedBitTensor& bits);

}  // namespace adabin
