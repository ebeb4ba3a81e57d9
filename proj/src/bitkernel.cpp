#include "adabin/bitkernel.hpp"

#include <algorithm>
#include <bit>

#include "adabin/error.hpp"

namespace adabin {

int xnor_popcount_dot(std::span<const std::uint64_t> a, std::span<const std::uint64_t> w,
                      std::span<const std::uint64_t> mask) {
  int same = 0, lanes = 0;
  for (std::size_t j = 0; j < mask.size(); ++j) {
    same += std::popcount(~(a[j] ^ w[j]) & mask[j]);
    lanes += std::popcount(mask[j]);
  }
  return 2 * same - lanes;
}

namespace {

PrecomputedBias::Range tap_range(std::size_t out_pos, std::size_t k, std::size_t in_extent,
                                 const ConvGeometry& g) {
  const long origin = static_cast<long>(out_pos * g.stride) - static_cast<long>(g.pad);
  const long lo = std::max<long>(0, -origin);
  const long hi = std::min<long>(static_cast<long>(k), static_cast<long>(in_extent) - origin);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

void classify(std::size_t out_extent, std::size_t k, std::size_t in_extent,
              const ConvGeometry& g, std::vector<PrecomputedBias::Range>& ranges,
              std::vector<std::uint32_t>& cls) {
  cls.resize(out_extent);
  for (std::size_t o = 0; o < out_extent; ++o) {
    const auto r = tap_range(o, k, in_extent, g);
    auto it = std::find(ranges.begin(), ranges.end(), r);
    if (it == ranges.end()) {
      ranges.push_back(r);
      it = ranges.end() - 1;
    }
    cls[o] = static_cast<std::uint32_t>(it - ranges.begin());
  }
}

// beta_a * (alpha_w * (2 * popcount - lanes) + beta_w * lanes)
float weight_sum_term(float beta_a, float alpha_w, float beta_w, long popcount, long lanes) {
  return beta_a * (alpha_w * static_cast<float>(2 * popcount - lanes) +
                   beta_w * static_cast<float>(lanes));
}

void check_weight_bits(const PackedBitTensor& w_bits) {
  const Shape& s = w_bits.shape();
  if (s.size() != 4 || s[2] != s[3]) {
    throw ShapeError("packed weights must be [n, c, k, k], got " + shape_str(s));
  }
}

}  // namespace

PrecomputedBias precompute_bias(const PackedBitTensor& w_bits, std::span<const float> alpha_w,
                                std::span<const float> beta_w, float beta_a,
                                const PackedGeometry& geom) {
  check_weight_bits(w_bits);
  const Shape& ws = w_bits.shape();
  const std::size_t n = ws[0], c = ws[1], k = ws[2];
  if (alpha_w.size() != n || beta_w.size() != n) {
    throw ShapeError("precompute_bias: weight spec length does not match " +
                     std::to_string(n) + " filters");
  }
  const std::size_t oh = conv_out_extent(geom.in_height, k, geom.conv);
  const std::size_t ow = conv_out_extent(geom.in_width, k, geom.conv);

  PrecomputedBias pb;
  pb.filters = n;
  classify(oh, k, geom.in_height, geom.conv, pb.row_ranges, pb.row_class);
  classify(ow, k, geom.in_width, geom.conv, pb.col_ranges, pb.col_class);

  // popcount of every (filter, tap) site.
  std::vector<long> tap_pc(n * k * k);
  for (std::size_t f = 0; f < n; ++f)
    for (std::size_t t = 0; t < k * k; ++t) {
      long pc = 0;
      for (auto w : w_bits.site(f, t)) pc += std::popcount(w);
      tap_pc[f * k * k + t] = pc;
    }

  pb.interior.resize(n);
  for (std::size_t f = 0; f < n; ++f) {
    long total = 0;
    for (std::size_t t = 0; t < k * k; ++t) total += tap_pc[f * k * k + t];
    pb.interior[f] =
        weight_sum_term(beta_a, alpha_w[f], beta_w[f], total, static_cast<long>(c * k * k));
  }

  pb.table.resize(pb.row_ranges.size() * pb.col_ranges.size() * n);
  for (std::size_t ri = 0; ri < pb.row_ranges.size(); ++ri)
    for (std::size_t ci = 0; ci < pb.col_ranges.size(); ++ci) {
      const auto& rr = pb.row_ranges[ri];
      const auto& cr = pb.col_ranges[ci];
      const long lanes = static_cast<long>(c * (rr.hi - rr.lo) * (cr.hi - cr.lo));
      for (std::size_t f = 0; f < n; ++f) {
        long pc = 0;
        for (std::size_t ky = rr.lo; ky < rr.hi; ++ky)
          for (std::size_t kx = cr.lo; kx < cr.hi; ++kx) pc += tap_pc[(f * k + ky) * k + kx];
        pb.table[(ri * pb.col_ranges.size() + ci) * n + f] =
            weight_sum_term(beta_a, alpha_w[f], beta_w[f], pc, lanes);
      }
    }
  return pb;
}

Tensor binary_conv_packed(const PackedBitTensor& a_bits, const PackedBitTensor& w_bits,
                          const PackedConvSpecs& specs, const ConvGeometry& geom,
                          const PrecomputedBias* bias) {
  check_weight_bits(w_bits);
  const Shape& as = a_bits.shape();
  const Shape& ws = w_bits.shape();
  if (as.size() != 4 || as[1] != ws[1]) {
    throw ShapeError("binary_conv_packed: activations " + shape_str(as) + " vs weights " +
                     shape_str(ws));
  }
  const std::size_t batch = as[0], h = as[2], w = as[3];
  const std::size_t n = ws[0], k = ws[2];
  if (specs.alpha_w.size() != n || specs.beta_w.size() != n) {
    throw ShapeError("binary_conv_packed: spec has " + std::to_string(specs.alpha_w.size()) +
                     " filters, weights have " + std::to_string(n));
  }
  const std::size_t oh = conv_out_extent(h, k, geom);
  const std::size_t ow = conv_out_extent(w, k, geom);

  PrecomputedBias local;
  if (!bias) {
    local = precompute_bias(w_bits, specs.alpha_w, specs.beta_w, specs.beta_a, {geom, h, w});
    bias = &local;
  } else if (bias->filters != n || bias->row_class.size() != oh || bias->col_class.size() != ow) {
    throw ShapeError("binary_conv_packed: precomputed bias does not match the geometry");
  }

  const auto mask = a_bits.mask();
  std::vector<float> scale_d(n), scale_s(n);
  for (std::size_t f = 0; f < n; ++f) {
    scale_d[f] = specs.alpha_a * specs.alpha_w[f];
    scale_s[f] = specs.alpha_a * specs.beta_w[f];
  }

  Tensor out({batch, n, oh, ow});
  std::vector<int> pixel_sum(h * w);
  std::vector<int> dots(n);
  int lanes = 0;
  for (auto m : mask) lanes += std::popcount(m);

  for (std::size_t b = 0; b < batch; ++b) {
    // Sum of +-1 activation values per input pixel, shared by all filters.
    for (std::size_t p = 0; p < h * w; ++p) {
      int pc = 0;
      const auto site = a_bits.site(b, p);
      for (std::size_t j = 0; j < site.size(); ++j) pc += std::popcount(site[j] & mask[j]);
      pixel_sum[p] = 2 * pc - lanes;
    }
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const auto& rr = bias->row_ranges[bias->row_class[oy]];
      const std::size_t iy0 = oy * geom.stride + rr.lo - geom.pad;
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const auto& cr = bias->col_ranges[bias->col_class[ox]];
        const std::size_t ix0 = ox * geom.stride + cr.lo - geom.pad;
        int s_term = 0;
        std::fill(dots.begin(), dots.end(), 0);
        for (std::size_t ky = rr.lo; ky < rr.hi; ++ky) {
          const std::size_t iy = iy0 + (ky - rr.lo);
          for (std::size_t kx = cr.lo; kx < cr.hi; ++kx) {
            const std::size_t ix = ix0 + (kx - cr.lo);
            s_term += pixel_sum[iy * w + ix];
            const auto act = a_bits.site(b, iy * w + ix);
            for (std::size_t f = 0; f < n; ++f) {
              dots[f] += xnor_popcount_dot(act, w_bits.site(f, ky * k + kx), mask);
            }
          }
        }
        for (std::size_t f = 0; f < n; ++f) {
          out.at(b, f, oy, ox) = scale_d[f] * static_cast<float>(dots[f]) +
                                 scale_s[f] * static_cast<float>(s_term) + bias->at(oy, ox, f);
        }
      }
    }
  }
  return out;
}

}  // namespace adabin
