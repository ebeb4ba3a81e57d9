#include "adabin/quantize.hpp"

#include <algorithm>
#include <cmath>

#include "adabin/error.hpp"

namespace adabin {

BinarySpec BinarySpec::scalar(float alpha, float beta) {
  return BinarySpec{{alpha}, {beta}, Granularity::PerLayerScalar};
}

BinarySpec BinarySpec::per_filter(std::vector<float> alpha, std::vector<float> beta) {
  if (alpha.size() != beta.size()) throw ShapeError("per-filter spec: alpha/beta length differ");
  return BinarySpec{std::move(alpha), std::move(beta), Granularity::PerOutputFilter};
}

namespace {

std::size_t spec_stride(const Tensor& x, const BinarySpec& spec) {
  if (spec.alpha.size() != spec.beta.size() || spec.alpha.empty()) {
    throw ShapeError("binary spec has mismatched or empty alpha/beta");
  }
  if (spec.granularity == Granularity::PerLayerScalar) {
    if (spec.size() != 1) throw ShapeError("per-layer spec must hold exactly one (alpha, beta)");
    return x.numel();
  }
  if (x.rank() < 1 || x.dim(0) != spec.size()) {
    throw ShapeError("per-filter spec of size " + std::to_string(spec.size()) +
                     " does not match tensor " + shape_str(x.shape()));
  }
  return x.numel() / spec.size();
}

}  // namespace

Tensor adabin_dequantize_only(const Tensor& x, const BinarySpec& spec) {
  const std::size_t per = spec_stride(x, spec);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t s = per ? i / per : 0;
    const float b = spec.beta[s], a = spec.alpha[s];
    out[i] = x[i] >= b ? b + a : b - a;
  }
  return out;
}

BinarizedPair adabin_quantize(const Tensor& x, const BinarySpec& spec) {
  BinarizedPair p{adabin_dequantize_only(x, spec), PackedBitTensor{}};
  if (spec.granularity == Granularity::PerLayerScalar) {
    p.bits = pack_ge(x, std::span<const float>(spec.beta.data(), 1));
  } else {
    p.bits = pack_ge(x, spec.beta);
  }
  return p;
}

BinarySpec equalize_weights(const Tensor& w) {
  const ChannelStats st = channel_stats(w);
  const std::size_t n = w.dim(0);
  const float root = std::sqrt(static_cast<float>(w.numel() / n));
  std::vector<float> alpha(n), beta(n);
  for (std::size_t f = 0; f < n; ++f) {
    beta[f] = st.mean[f];
    alpha[f] = st.l2_of_centered[f] / root;
  }
  return BinarySpec::per_filter(std::move(alpha), std::move(beta));
}

BinarySpec zero_center_weights(const Tensor& w) {
  if (w.rank() < 2 || w.numel() == 0) throw ShapeError("weight spec needs [n, ...]");
  const std::size_t n = w.dim(0);
  const std::size_t per = w.numel() / n;
  std::vector<float> alpha(n), beta(n, 0.0f);
  for (std::size_t f = 0; f < n; ++f) {
    double sq = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double v = w[f * per + i];
      sq += v * v;
    }
    alpha[f] = static_cast<float>(std::sqrt(sq / static_cast<double>(per)));
  }
  return BinarySpec::per_filter(std::move(alpha), std::move(beta));
}

BinarizedPair activation_binarize_forward(const Tensor& a, const BinarySpec& spec,
                                          ActivationContext* ctx) {
  if (spec.granularity != Granularity::PerLayerScalar || spec.size() != 1) {
    throw ShapeError("activation binarizer needs a per-layer scalar spec");
  }
  if (ctx) {
    ctx->input = a;
    ctx->alpha = spec.alpha[0];
    ctx->beta = spec.beta[0];
    ctx->valid = true;
  }
  return adabin_quantize(a, spec);
}

SteSums ste_backward_span(std::span<const float> upstream, std::span<const float> x, float alpha,
                          float beta, AlphaGradMode mode, std::span<float> grad_x) {
  SteSums s;
  const float inv = 1.0f / alpha;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float up = upstream[i];
    const float u = (x[i] - beta) * inv;
    const bool inside = std::fabs(u) <= 1.0f;
    grad_x[i] = inside ? up : 0.0f;
    if (!inside) s.grad_beta += up;
    double dalpha;
    if (mode == AlphaGradMode::Consistent) {
      // d/dalpha [alpha * Htanh(u) + beta] = Htanh(u) - u * 1{|u| <= 1}
      dalpha = inside ? 0.0 : (u > 0.0f ? 1.0 : -1.0);
    } else {
      const double g = u >= 0.0f ? 1.0 : -1.0;
      dalpha = g - (inside ? static_cast<double>(x[i]) * inv : 0.0);
    }
    s.grad_alpha += static_cast<double>(up) * dalpha;
  }
  return s;
}

ActivationGrads activation_binarize_backward(const Tensor& upstream, const ActivationContext& ctx,
                                             AlphaGradMode mode) {
  if (!ctx.valid) throw Error("activation backward called without a saved forward context");
  if (upstream.shape() != ctx.input.shape()) {
    throw ShapeError("activation backward: upstream " + shape_str(upstream.shape()) +
                     " vs saved input " + shape_str(ctx.input.shape()));
  }
  ActivationGrads g{Tensor(upstream.shape()), 0.0, 0.0};
  const SteSums s = ste_backward_span(upstream.data(), ctx.input.data(), ctx.alpha, ctx.beta,
                                      mode, g.grad_input.data());
  g.grad_alpha = s.grad_alpha;
  g.grad_beta = s.grad_beta;
  return g;
}

double kld_numeric(const Tensor& samples, const BinarySpec& spec, int bins) {
  if (samples.empty()) throw Error("kld_numeric: empty samples");
  if (bins < 8) throw Error("kld_numeric: need at least 8 bins");
  if (spec.size() != 1) throw ShapeError("kld_numeric: expects a single (alpha, beta)");
  const double lo_spike = spec.lower(), hi_spike = spec.upper();

  double mean = 0.0;
  for (float v : samples.data()) mean += v;
  mean /= static_cast<double>(samples.numel());
  double var = 0.0;
  for (float v : samples.data()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(samples.numel()));

  const auto [mn, mx] = std::minmax_element(samples.data().begin(), samples.data().end());
  double lo = std::min<double>(*mn, lo_spike);
  double hi = std::max<double>(*mx, hi_spike);
  const double margin = 3.0 * std::max(sd, 1e-6 * std::max(1.0, hi - lo));
  lo -= margin;
  hi += margin;
  const double width = (hi - lo) / bins;
  auto bin_of = [&](double v) {
    const auto b = static_cast<long>(std::floor((v - lo) / width));
    return static_cast<std::size_t>(std::clamp<long>(b, 0, bins - 1));
  };

  std::vector<double> real(bins, 0.0), binary(bins, 0.0);
  for (float v : samples.data()) real[bin_of(v)] += 1.0;
  for (auto& r : real) r /= static_cast<double>(samples.numel());
  binary[bin_of(lo_spike)] += 0.5;
  binary[bin_of(hi_spike)] += 0.5;

  // Gaussian smoothing in bin units; width at least one bin.
  const double h = std::max(sd / width, 1.0);
  const int reach = static_cast<int>(std::ceil(4.0 * h));
  std::vector<double> kernel(2 * reach + 1);
  for (int i = -reach; i <= reach; ++i) kernel[i + reach] = std::exp(-0.5 * (i / h) * (i / h));
  auto smooth = [&](const std::vector<double>& in) {
    std::vector<double> out(bins, 0.0);
    for (int b = 0; b < bins; ++b) {
      if (in[b] == 0.0) continue;
      double z = 0.0;
      for (int i = -reach; i <= reach; ++i) {
        if (b + i >= 0 && b + i < bins) z += kernel[i + reach];
      }
      for (int i = -reach; i <= reach; ++i) {
        if (b + i >= 0 && b + i < bins) out[b + i] += in[b] * kernel[i + reach] / z;
      }
    }
    return out;
  };
  const std::vector<double> pr = smooth(real);
  const std::vector<double> pb = smooth(binary);

  constexpr double kFloor = 1e-12;
  double kl = 0.0;
  for (int b = 0; b < bins; ++b) {
    if (pr[b] <= 0.0) continue;
    kl += pr[b] * std::log((pr[b] + kFloor) / (pb[b] + kFloor));
  }
  return std::max(kl, 0.0);
}

}  // namespace adabin
