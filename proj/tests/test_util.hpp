#pragma once

// Independent reference implementations and helpers for the test suites.
// Nothing here calls into the kernels it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "adabin/layers.hpp"
#include "adabin/tensor.hpp"

namespace testutil {

using adabin::Shape;
using adabin::Tensor;
using Rng = std::mt19937_64;

inline Tensor random_tensor(const Shape& s, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(s);
  std::uniform_real_distribution<float> d(lo, hi);
  for (float& v : t.data()) v = d(rng);
  return t;
}

inline Tensor random_signs(const Shape& s, Rng& rng) {
  Tensor t(s);
  std::bernoulli_distribution coin(0.5);
  for (float& v : t.data()) v = coin(rng) ? 1.0f : -1.0f;
  return t;
}

/// Direct-sum convolution in double precision, written from the definition.
inline std::vector<double> naive_conv(const Tensor& x, const Tensor& w, std::size_t stride,
                                      std::size_t pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t F = w.dim(0), K = w.dim(2);
  const std::size_t OH = (H + 2 * pad - K) / stride + 1, OW = (W + 2 * pad - K) / stride + 1;
  std::vector<double> y(N * F * OH * OW, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double s = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < K; ++ky)
              for (std::size_t kx = 0; kx < K; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W))
                  continue;
                s += static_cast<double>(x[((n * C + c) * H + iy) * W + ix]) *
                     w[((f * C + c) * K + ky) * K + kx];
              }
          y[((n * F + f) * OH + oy) * OW + ox] = s;
        }
  return y;
}

/// max |a - b| / max |b| (or the absolute error when b is all zero).
template <typename A, typename B>
double max_rel_err(const A& a, const B& b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    diff = std::max(diff, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    scale = std::max(scale, std::fabs(static_cast<double>(b[i])));
  }
  return scale > 0.0 ? diff / scale : diff;
}

inline std::vector<double> to_double(const Tensor& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

/// Relative agreement of one finite-difference estimate with an analytic
/// gradient, with an absolute floor for gradients that are essentially 0.
inline bool grad_close(double analytic, double numeric, double tol, double floor = 1e-3) {
  return std::fabs(analytic - numeric) <= tol * std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

inline std::string temp_dir(const std::string& tag) {
  const auto p = std::filesystem::temp_directory_path() /
                 ("adabin_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace testutil

namespace testutil {

/// Central-difference check of every entry of `value` (at most `limit`
/// entries, evenly strided) against `analytic`. `loss` re-evaluates the
/// objective with the current contents of `value`. Returns the number of
/// mismatches.
template <typename Loss>
int fd_mismatches(Tensor& value, const Tensor& analytic, Loss&& loss, double h, double tol,
                  std::size_t limit = 64, double floor = 1e-3) {
  int bad = 0;
  const std::size_t step = std::max<std::size_t>(1, value.numel() / limit);
  for (std::size_t i = 0; i < value.numel(); i += step) {
    const float orig = value[i];
    value[i] = orig + static_cast<float>(h);
    const double lp = loss();
    value[i] = orig - static_cast<float>(h);
    const double lm = loss();
    value[i] = orig;
    const double num = (lp - lm) / (2.0 * h);
    if (!grad_close(analytic[i], num, tol, floor)) ++bad;
  }
  return bad;
}

}  // namespace testutil

namespace testutil {

/// sum(r * layer(x)) in double; r is a fixed random projection.
inline double projected(adabin::Layer& l, const Tensor& x, const Tensor& r, adabin::Mode mode) {
  const Tensor y = l.forward(x, mode);
  double s = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) s += static_cast<double>(y[i]) * r[i];
  return s;
}

/// Finite-difference check of the input gradient and of every parameter of
/// `l`. Returns the total number of mismatching entries.
inline int layer_fd(adabin::Layer& l, Tensor x, adabin::Mode mode, double h, double tol, Rng& rng) {
  const Tensor r = random_tensor(l.forward(x, mode).shape(), rng);
  std::vector<adabin::Parameter*> params;
  l.collect_parameters(params);
  adabin::zero_grads(params);
  l.forward(x, mode);
  const Tensor gx = l.backward(r);
  auto loss = [&] { return projected(l, x, r, mode); };
  int bad = fd_mismatches(x, gx, loss, h, tol);
  for (adabin::Parameter* p : params) {
    const Tensor g = p->grad;
    bad += fd_mismatches(p->value, g, loss, h, tol);
  }
  return bad;
}

}  // namespace testutil
