#include "adabin/bits.hpp"

#include <bit>

#include "adabin/error.hpp"

namespace adabin {

PackedBitTensor::PackedBitTensor(Shape logical) : shape_(std::move(logical)) {
  if (shape_.empty()) throw ShapeError("packed tensor needs rank >= 1");
  if (shape_.size() == 1) {
    outer_ = 1;
    channels_ = shape_[0];
    inner_ = 1;
  } else {
    outer_ = shape_[0];
    channels_ = shape_[1];
    inner_ = 1;
    for (std::size_t i = 2; i < shape_.size(); ++i) inner_ *= shape_[i];
  }
  wps_ = (channels_ + 63) / 64;
  words_.assign(outer_ * inner_ * wps_, 0);
  mask_.assign(wps_, 0);
  for (std::size_t c = 0; c < channels_; ++c) mask_[c / 64] |= std::uint64_t{1} << (c % 64);
}

bool PackedBitTensor::get_flat(std::size_t flat) const noexcept {
  const std::size_t in = flat % inner_;
  const std::size_t c = (flat / inner_) % channels_;
  const std::size_t o = flat / (inner_ * channels_);
  return get(o, c, in);
}

void PackedBitTensor::set_flat(std::size_t flat, bool on) noexcept {
  const std::size_t in = flat % inner_;
  const std::size_t c = (flat / inner_) % channels_;
  const std::size_t o = flat / (inner_ * channels_);
  set(o, c, in, on);
}

std::size_t PackedBitTensor::count_ones() const noexcept {
  std::size_t n = 0;
  for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

PackedBitTensor pack(const Tensor& signs) {
  PackedBitTensor bits(signs.shape());
  for (std::size_t i = 0; i < signs.numel(); ++i) {
    const float v = signs[i];
    if (v == 1.0f) {
      bits.set_flat(i, true);
    } else if (v != -1.0f) {
      throw Error("pack: element " + std::to_string(i) + " is " + std::to_string(v) +
                  ", expected -1 or +1 (quantize first)");
    }
  }
  return bits;
}

PackedBitTensor pack_ge(const Tensor& x, std::span<const float> thresholds) {
  PackedBitTensor bits(x.shape());
  const std::size_t lead = x.rank() >= 2 ? x.dim(0) : 1;
  if (thresholds.size() != 1 && thresholds.size() != lead) {
    throw ShapeError("pack_ge: " + std::to_string(thresholds.size()) +
                     " thresholds for tensor " + shape_str(x.shape()));
  }
  const std::size_t per = lead ? x.numel() / lead : 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float t = thresholds.size() == 1 ? thresholds[0] : thresholds[i / per];
    if (x[i] >= t) bits.set_flat(i, true);
  }
  return bits;
}

Tensor unpack(const PackedBitTensor& bits) {
  Tensor out(bits.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = bits.get_flat(i) ? 1.0f : -1.0f;
  return out;
}

}  // namespace adabin
