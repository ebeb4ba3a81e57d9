#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace adabin {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Dense row-major real32 array. Feature maps are NCHW, conv weights are
/// [filters, channels, k, k].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  /// Same as the (shape, values) constructor but also rejects NaN/Inf.
  /// Use for anything coming from files or user input.
  static Tensor from_external(Shape shape, std::vector<float> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Tensor reshaped(Shape shape) const;
  void fill(float v);
  bool all_finite() const noexcept;

 private:
  Shape shape_;
  std::vector<float> data_;
};

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// Output spatial extent of a convolution; throws ShapeError if the kernel
/// does not fit.
std::size_t conv_out_extent(std::size_t in, std::size_t k, const ConvGeometry& g);

/// Direct zero-padded 2-D convolution (no bias, no dilation, no groups).
Tensor conv2d_ref(const Tensor& input, const Tensor& weight, const ConvGeometry& g);

/// Gradients of conv2d_ref with respect to its input and its weight.
Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight,
                             const Shape& input_shape, const ConvGeometry& g);
Tensor conv2d_backward_weight(const Tensor& grad_out, const Tensor& input,
                              const Shape& weight_shape, const ConvGeometry& g);

struct ChannelStats {
  Tensor mean;            // [n]
  Tensor l2_of_centered;  // [n]
};

/// Per-output-filter mean and l2 norm of the centered filter.
ChannelStats channel_stats(const Tensor& w);

// Elementwise helpers. Broadcasting is limited to scalar-vs-tensor and
// per-channel [C] vs NCHW.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
/// 1 where x >= threshold, else 0.
Tensor compare_ge(const Tensor& x, float threshold);

}  // namespace adabin
