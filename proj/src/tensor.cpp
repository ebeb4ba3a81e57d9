#include "adabin/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "adabin/error.hpp"

namespace adabin {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_str(shape_) + " needs " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Tensor Tensor::from_external(Shape shape, std::vector<float> values) {
  Tensor t(std::move(shape), std::move(values));
  if (!t.all_finite()) throw Error("tensor contains NaN or Inf");
  return t;
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= shape_.size()) {
    throw ShapeError("dim " + std::to_string(i) + " out of range for " + shape_str(shape_));
  }
  return shape_[i];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, const ConvGeometry& g) {
  if (g.stride == 0) throw ShapeError("conv stride must be >= 1");
  if (k == 0 || k > in + 2 * g.pad) {
    throw ShapeError("kernel " + std::to_string(k) + " does not fit input extent " +
                     std::to_string(in) + " with pad " + std::to_string(g.pad));
  }
  return (in + 2 * g.pad - k) / g.stride + 1;
}

namespace {

struct ConvDims {
  std::size_t n, c, h, w;  // input
  std::size_t f, k;        // filters, kernel
  std::size_t oh, ow;
};

ConvDims check_conv(const Shape& in, const Shape& wt, const ConvGeometry& g) {
  if (in.size() != 4 || wt.size() != 4 || wt[2] != wt[3] || in[1] != wt[1]) {
    throw ShapeError("conv2d: input " + shape_str(in) + " incompatible with weight " +
                     shape_str(wt));
  }
  ConvDims d{in[0], in[1], in[2], in[3], wt[0], wt[2], 0, 0};
  d.oh = conv_out_extent(d.h, d.k, g);
  d.ow = conv_out_extent(d.w, d.k, g);
  return d;
}

// col is [c*k*k, oh*ow] for a single image.
void im2col(const float* img, const ConvDims& d, const ConvGeometry& g, float* col) {
  const std::size_t plane = d.oh * d.ow;
  for (std::size_t ch = 0; ch < d.c; ++ch) {
    for (std::size_t ky = 0; ky < d.k; ++ky) {
      for (std::size_t kx = 0; kx < d.k; ++kx) {
        float* row = col + ((ch * d.k + ky) * d.k + kx) * plane;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          float* dst = row + oy * d.ow;
          if (iy < 0 || iy >= static_cast<long>(d.h)) {
            std::fill(dst, dst + d.ow, 0.0f);
            continue;
          }
          const float* src = img + (ch * d.h + static_cast<std::size_t>(iy)) * d.w;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(d.w)) ? 0.0f
                                                               : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvDims& d, const ConvGeometry& g, float* img) {
  const std::size_t plane = d.oh * d.ow;
  for (std::size_t ch = 0; ch < d.c; ++ch) {
    for (std::size_t ky = 0; ky < d.k; ++ky) {
      for (std::size_t kx = 0; kx < d.k; ++kx) {
        const float* row = col + ((ch * d.k + ky) * d.k + kx) * plane;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
          float* dst = img + (ch * d.h + static_cast<std::size_t>(iy)) * d.w;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
            dst[static_cast<std::size_t>(ix)] += row[oy * d.ow + ox];
          }
        }
      }
    }
  }
}

// out[m x p] = a[m x q] * b[q x p], all row-major.
void gemm_nn(const float* a, const float* b, float* out, std::size_t m, std::size_t q,
             std::size_t p) {
  std::fill(out, out + m * p, 0.0f);
  for (std::size_t i = 0; i < m; ++i) {
    float* o = out + i * p;
    for (std::size_t j = 0; j < q; ++j) {
      const float s = a[i * q + j];
      if (s == 0.0f) continue;
      const float* brow = b + j * p;
      for (std::size_t x = 0; x < p; ++x) o[x] += s * brow[x];
    }
  }
}

// out[q x p] += a^T * b with a[m x q], b[m x p].
void gemm_tn_add(const float* a, const float* b, float* out, std::size_t m, std::size_t q,
                 std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* brow = b + i * p;
    for (std::size_t j = 0; j < q; ++j) {
      const float s = a[i * q + j];
      if (s == 0.0f) continue;
      float* o = out + j * p;
      for (std::size_t x = 0; x < p; ++x) o[x] += s * brow[x];
    }
  }
}

// out[m x q] += a[m x p] * b[q x p]^T. Fixed 8-lane partial sums keep the
// summation order independent of compiler vectorization choices.
void gemm_nt_add(const float* a, const float* b, float* out, std::size_t m, std::size_t q,
                 std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * p;
    for (std::size_t j = 0; j < q; ++j) {
      const float* brow = b + j * p;
      float lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
      std::size_t x = 0;
      for (; x + 8 <= p; x += 8) {
        for (int l = 0; l < 8; ++l) lanes[l] += arow[x + l] * brow[x + l];
      }
      float acc = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
                  ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
      for (; x < p; ++x) acc += arow[x] * brow[x];
      out[i * q + j] += acc;
    }
  }
}

}  // namespace

Tensor conv2d_ref(const Tensor& input, const Tensor& weight, const ConvGeometry& g) {
  const ConvDims d = check_conv(input.shape(), weight.shape(), g);
  Tensor out({d.n, d.f, d.oh, d.ow});
  const std::size_t ckk = d.c * d.k * d.k;
  const std::size_t plane = d.oh * d.ow;
  std::vector<float> col(ckk * plane);
  for (std::size_t b = 0; b < d.n; ++b) {
    im2col(input.data().data() + b * d.c * d.h * d.w, d, g, col.data());
    gemm_nn(weight.data().data(), col.data(), out.data().data() + b * d.f * plane, d.f, ckk,
            plane);
  }
  return out;
}

Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight,
                             const Shape& input_shape, const ConvGeometry& g) {
  const ConvDims d = check_conv(input_shape, weight.shape(), g);
  if (grad_out.shape() != Shape{d.n, d.f, d.oh, d.ow}) {
    throw ShapeError("conv2d backward: grad " + shape_str(grad_out.shape()) +
                     " does not match output of input " + shape_str(input_shape));
  }
  Tensor grad_in(input_shape);
  const std::size_t ckk = d.c * d.k * d.k;
  const std::size_t plane = d.oh * d.ow;
  std::vector<float> col(ckk * plane);
  for (std::size_t b = 0; b < d.n; ++b) {
    std::fill(col.begin(), col.end(), 0.0f);
    gemm_tn_add(weight.data().data(), grad_out.data().data() + b * d.f * plane, col.data(), d.f,
                ckk, plane);
    col2im_add(col.data(), d, g, grad_in.data().data() + b * d.c * d.h * d.w);
  }
  return grad_in;
}

Tensor conv2d_backward_weight(const Tensor& grad_out, const Tensor& input,
                              const Shape& weight_shape, const ConvGeometry& g) {
  const ConvDims d = check_conv(input.shape(), weight_shape, g);
  if (grad_out.shape() != Shape{d.n, d.f, d.oh, d.ow}) {
    throw ShapeError("conv2d backward: grad " + shape_str(grad_out.shape()) +
                     " does not match output of input " + shape_str(input.shape()));
  }
  Tensor grad_w(weight_shape);
  const std::size_t ckk = d.c * d.k * d.k;
  const std::size_t plane = d.oh * d.ow;
  std::vector<float> col(ckk * plane);
  for (std::size_t b = 0; b < d.n; ++b) {
    im2col(input.data().data() + b * d.c * d.h * d.w, d, g, col.data());
    gemm_nt_add(grad_out.data().data() + b * d.f * plane, col.data(), grad_w.data().data(), d.f,
                ckk, plane);
  }
  return grad_w;
}

ChannelStats channel_stats(const Tensor& w) {
  if (w.rank() < 2 || w.numel() == 0) {
    throw ShapeError("channel_stats: expected [n, ...] with nonempty filters, got " +
                     shape_str(w.shape()));
  }
  const std::size_t n = w.dim(0);
  const std::size_t per = w.numel() / n;
  ChannelStats s{Tensor({n}), Tensor({n})};
  for (std::size_t f = 0; f < n; ++f) {
    const float* p = w.data().data() + f * per;
    double sum = 0.0;
    for (std::size_t i = 0; i < per; ++i) sum += p[i];
    const double mean = sum / static_cast<double>(per);
    double sq = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double d = p[i] - mean;
      sq += d * d;
    }
    s.mean[f] = static_cast<float>(mean);
    s.l2_of_centered[f] = static_cast<float>(std::sqrt(sq));
  }
  return s;
}

namespace {

enum class Broadcast { Same, ScalarB, ScalarA, ChannelB, ChannelA };

Broadcast classify(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (b.numel() == 1) return Broadcast::ScalarB;
  if (a.numel() == 1) return Broadcast::ScalarA;
  if (a.rank() == 4 && b.rank() == 1 && b.dim(0) == a.dim(1)) return Broadcast::ChannelB;
  if (b.rank() == 4 && a.rank() == 1 && a.dim(0) == b.dim(1)) return Broadcast::ChannelA;
  throw ShapeError("cannot broadcast " + shape_str(a.shape()) + " with " + shape_str(b.shape()));
}

template <typename Op>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, Op op) {
  switch (classify(a, b)) {
    case Broadcast::Same: {
      Tensor out(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) out[i] = op(a[i], b[i]);
      return out;
    }
    case Broadcast::ScalarB: {
      Tensor out(a.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) out[i] = op(a[i], b[0]);
      return out;
    }
    case Broadcast::ScalarA: {
      Tensor out(b.shape());
      for (std::size_t i = 0; i < b.numel(); ++i) out[i] = op(a[0], b[i]);
      return out;
    }
    case Broadcast::ChannelB:
    case Broadcast::ChannelA: {
      const bool chan_b = b.rank() == 1;
      const Tensor& big = chan_b ? a : b;
      const Tensor& chan = chan_b ? b : a;
      Tensor out(big.shape());
      const std::size_t c = big.dim(1), hw = big.dim(2) * big.dim(3);
      for (std::size_t i = 0; i < big.numel(); ++i) {
        const float cv = chan[(i / hw) % c];
        out[i] = chan_b ? op(big[i], cv) : op(cv, big[i]);
      }
      return out;
    }
  }
  return {};
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, [](float x, float y) { return x + y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(a, b, [](float x, float y) { return x * y; });
}

Tensor scale(const Tensor& a, float s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  return out;
}

Tensor compare_ge(const Tensor& x, float threshold) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] >= threshold ? 1.0f : 0.0f;
  return out;
}

}  // namespace adabin
