#include <algorithm>
#include <cmath>
#include <limits>

#include "tgvunet/kernels.hpp"

namespace tgvunet::kernels::parallel {

namespace {

// Output rows/cols [lo, hi) for which o + k - pad lands inside [0, in).
inline void valid_range(long in, long out, long k, long pad, long& lo, long& hi) {
  lo = std::max(0L, pad - k);
  hi = std::min(out, in + pad - k);
  if (hi < lo) hi = lo;
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, int padding) {
  const Shape in = input.shape();
  const Shape wt = weight.shape();
  const Shape os = conv2d_output_shape(in, wt, bias.size(), padding);
  Tensor out(os);
  const long planes = static_cast<long>(os.n * os.c);
  const long K = static_cast<long>(wt.h);
  const long ih = static_cast<long>(in.h), iw = static_cast<long>(in.w);
  const long oh = static_cast<long>(os.h), ow = static_cast<long>(os.w);

#pragma omp parallel for schedule(static)
  for (long p = 0; p < planes; ++p) {
    const std::size_t n = static_cast<std::size_t>(p) / os.c;
    const std::size_t co = static_cast<std::size_t>(p) % os.c;
    double* dst = out.plane(n, co);
    std::fill(dst, dst + os.plane(), bias[co]);
    for (std::size_t ci = 0; ci < in.c; ++ci) {
      const double* src = input.plane(n, ci);
      for (long ky = 0; ky < K; ++ky) {
        long y0, y1;
        valid_range(ih, oh, ky, padding, y0, y1);
        for (long kx = 0; kx < K; ++kx) {
          long x0, x1;
          valid_range(iw, ow, kx, padding, x0, x1);
          const double wv = weight.at(co, ci, ky, kx);
          for (long oy = y0; oy < y1; ++oy) {
            const double* srow = src + (oy + ky - padding) * iw + (kx - padding);
            double* drow = dst + oy * ow;
#pragma omp simd
            for (long ox = x0; ox < x1; ++ox) drow[ox] += wv * srow[ox];
          }
        }
      }
    }
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output, int padding) {
  const Shape in = input.shape();
  const Shape wt = weight.shape();
  const Shape os = conv2d_output_shape(in, wt, wt.n, padding);
  require_same_shape(grad_output.shape(), os, "conv2d backward");
  Conv2dGrads g{Tensor(in), Tensor(wt), Tensor({1, 1, 1, wt.n})};
  const long K = static_cast<long>(wt.h);
  const long ih = static_cast<long>(in.h), iw = static_cast<long>(in.w);
  const long oh = static_cast<long>(os.h), ow = static_cast<long>(os.w);

  // d input: one (n, ci) plane per iteration.
  const long in_planes = static_cast<long>(in.n * in.c);
#pragma omp parallel for schedule(static)
  for (long p = 0; p < in_planes; ++p) {
    const std::size_t n = static_cast<std::size_t>(p) / in.c;
    const std::size_t ci = static_cast<std::size_t>(p) % in.c;
    double* gi = g.input.plane(n, ci);
    for (std::size_t co = 0; co < os.c; ++co) {
      const double* go = grad_output.plane(n, co);
      for (long ky = 0; ky < K; ++ky) {
        long y0, y1;
        valid_range(ih, oh, ky, padding, y0, y1);
        for (long kx = 0; kx < K; ++kx) {
          long x0, x1;
          valid_range(iw, ow, kx, padding, x0, x1);
          const double wv = weight.at(co, ci, ky, kx);
          for (long oy = y0; oy < y1; ++oy) {
            double* irow = gi + (oy + ky - padding) * iw + (kx - padding);
            const double* grow = go + oy * ow;
#pragma omp simd
            for (long ox = x0; ox < x1; ++ox) irow[ox] += wv * grow[ox];
          }
        }
      }
    }
  }

  // d weight, d bias: one output channel per iteration.
  const long cout = static_cast<long>(wt.n);
#pragma omp parallel for schedule(static)
  for (long co_l = 0; co_l < cout; ++co_l) {
    const auto co = static_cast<std::size_t>(co_l);
    double bsum = 0;
    for (std::size_t n = 0; n < os.n; ++n) {
      const double* go = grad_output.plane(n, co);
      for (std::size_t i = 0; i < os.plane(); ++i) bsum += go[i];
    }
    g.bias[co] = bsum;
    for (std::size_t ci = 0; ci < in.c; ++ci)
      for (long ky = 0; ky < K; ++ky) {
        long y0, y1;
        valid_range(ih, oh, ky, padding, y0, y1);
        for (long kx = 0; kx < K; ++kx) {
          long x0, x1;
          valid_range(iw, ow, kx, padding, x0, x1);
          double acc = 0;
          for (std::size_t n = 0; n < os.n; ++n) {
            const double* src = input.plane(n, ci);
            const double* go = grad_output.plane(n, co);
            for (long oy = y0; oy < y1; ++oy) {
              const double* srow = src + (oy + ky - padding) * iw + (kx - padding);
              const double* grow = go + oy * ow;
              for (long ox = x0; ox < x1; ++ox) acc += grow[ox] * srow[ox];
            }
          }
          g.weight.at(co, ci, ky, kx) = acc;
        }
      }
  }
  return g;
}

Tensor conv_transpose2d_forward(const Tensor& input, const Tensor& weight, int stride) {
  const Shape in = input.shape();
  const Shape wt = weight.shape();
  const Shape os = conv_transpose2d_output_shape(in, wt, stride);
  const long crop = static_cast<long>(conv_transpose2d_crop(wt.h, stride));
  const long oh = static_cast<long>(os.h), ow = static_cast<long>(os.w);
  Tensor out(os);
  const long planes = static_cast<long>(os.n * os.c);

#pragma omp parallel for schedule(static)
  for (long p = 0; p < planes; ++p) {
    const std::size_t n = static_cast<std::size_t>(p) / os.c;
    const std::size_t co = static_cast<std::size_t>(p) % os.c;
    double* dst = out.plane(n, co);
    for (std::size_t ci = 0; ci < in.c; ++ci) {
      const double* src = input.plane(n, ci);
      for (std::size_t ky = 0; ky < wt.h; ++ky)
        for (std::size_t kx = 0; kx < wt.w; ++kx) {
          const double wv = weight.at(ci, co, ky, kx);
          for (std::size_t iy = 0; iy < in.h; ++iy) {
            const long oy = static_cast<long>(iy) * stride + static_cast<long>(ky) - crop;
            if (oy < 0 || oy >= oh) continue;
            for (std::size_t ix = 0; ix < in.w; ++ix) {
              const long ox = static_cast<long>(ix) * stride + static_cast<long>(kx) - crop;
              if (ox < 0 || ox >= ow) continue;
              dst[oy * ow + ox] += wv * src[iy * in.w + ix];
            }
          }
        }
    }
  }
  return out;
}

ConvTransposeGrads conv_transpose2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,
                                             int stride) {
  const Shape in = input.shape();
  const Shape wt = weight.shape();
  const Shape os = conv_transpose2d_output_shape(in, wt, stride);
  require_same_shape(grad_output.shape(), os, "transpose conv backward");
  const long crop = static_cast<long>(conv_transpose2d_crop(wt.h, stride));
  const long oh = static_cast<long>(os.h), ow = static_cast<long>(os.w);
  ConvTransposeGrads g{Tensor(in), Tensor(wt)};

  const long in_planes = static_cast<long>(in.n * in.c);
#pragma omp parallel for schedule(static)
  for (long p = 0; p < in_planes; ++p) {
    const std::size_t n = static_cast<std::size_t>(p) / in.c;
    const std::size_t ci = static_cast<std::size_t>(p) % in.c;
    double* gi = g.input.plane(n, ci);
    for (std::size_t co = 0; co < os.c; ++co) {
      const double* go = grad_output.plane(n, co);
      for (std::size_t ky = 0; ky < wt.h; ++ky)
        for (std::size_t kx = 0; kx < wt.w; ++kx) {
          const double wv = weight.at(ci, co, ky, kx);
          for (std::size_t iy = 0; iy < in.h; ++iy) {
            const long oy = static_cast<long>(iy) * stride + static_cast<long>(ky) - crop;
            if (oy < 0 || oy >= oh) continue;
            for (std::size_t ix = 0; ix < in.w; ++ix) {
              const long ox = static_cast<long>(ix) * stride + static_cast<long>(kx) - crop;
              if (ox < 0 || ox >= ow) continue;
              gi[iy * in.w + ix] += wv * go[oy * ow + ox];
            }
          }
        }
    }
  }

  const long cin = static_cast<long>(wt.n);
#pragma omp parallel for schedule(static)
  for (long ci_l = 0; ci_l < cin; ++ci_l) {
    const auto ci = static_cast<std::size_t>(ci_l);
    for (std::size_t co = 0; co < wt.c; ++co)
      for (std::size_t ky = 0; ky < wt.h; ++ky)
        for (std::size_t kx = 0; kx < wt.w; ++kx) {
          double acc = 0;
          for (std::size_t n = 0; n < in.n; ++n) {
            const double* src = input.plane(n, ci);
            const double* go = grad_output.plane(n, co);
            for (std::size_t iy = 0; iy < in.h; ++iy) {
              const long oy = static_cast<long>(iy) * stride + static_cast<long>(ky) - crop;
              if (oy < 0 || oy >= oh) continue;
              for (std::size_t ix = 0; ix < in.w; ++ix) {
                const long ox = static_cast<long>(ix) * stride + static_cast<long>(kx) - crop;
                if (ox < 0 || ox >= ow) continue;
                acc += src[iy * in.w + ix] * go[oy * ow + ox];
              }
            }
          }
          g.weight.at(ci, co, ky, kx) = acc;
        }
  }
  return g;
}

Tensor bilinear_upsample2x(const Tensor& input) {
  const Shape in = input.shape();
  const auto ty = bilinear_taps(in.h);
  const auto tx = bilinear_taps(in.w);
  const std::size_t oh = 2 * in.h, ow = 2 * in.w;
  Tensor out({in.n, in.c, oh, ow});
  const long planes = static_cast<long>(in.n * in.c);

#pragma omp parallel for schedule(static)
  for (long p = 0; p < planes; ++p) {
    const double* src = input.data().data() + static_cast<std::size_t>(p) * in.plane();
    double* dst = out.data().data() + static_cast<std::size_t>(p) * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const auto& a = ty[oy];
      const double* r0 = src + a.lo * in.w;
      const double* r1 = src + a.hi * in.w;
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const auto& b = tx[ox];
        const double top = r0[b.lo] + b.t * (r0[b.hi] - r0[b.lo]);
        const double bot = r1[b.lo] + b.t * (r1[b.hi] - r1[b.lo]);
        dst[oy * ow + ox] = top + a.t * (bot - top);
      }
    }
  }
  return out;
}

Tensor bilinear_upsample2x_adjoint(const Tensor& grad_output, const Shape& in) {
  require_same_shape(grad_output.shape(), {in.n, in.c, 2 * in.h, 2 * in.w}, "bilinear upsample backward");
  const auto ty = bilinear_taps(in.h);
  const auto tx = bilinear_taps(in.w);
  const std::size_t oh = 2 * in.h, ow = 2 * in.w;
  Tensor g(in);
  const long planes = static_cast<long>(in.n * in.c);

#pragma omp parallel for schedule(static)
  for (long p = 0; p < planes; ++p) {
    const double* go = grad_output.data().data() + static_cast<std::size_t>(p) * oh * ow;
    double* gi = g.data().data() + static_cast<std::size_t>(p) * in.plane();
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const auto& a = ty[oy];
      double* r0 = gi + a.lo * in.w;
      double* r1 = gi + a.hi * in.w;
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const auto& b = tx[ox];
        const double v = go[oy * ow + ox];
        const double top = v * (1 - a.t);
        const double bot = v * a.t;
        r0[b.lo] += top * (1 - b.t);
        r0[b.hi] += top * b.t;
        r1[b.lo] += bot * (1 - b.t);
        r1[b.hi] += bot * b.t;
      }
    }
  }
  return g;
}

PoolResult max_pool2_forward(const Tensor& input) {
  const Shape in = input.shape();
  if (in.h % 2 != 0 || in.w % 2 != 0) throw ShapeError("max_pool2: spatial dims must be even, got " + in.str());
  const std::size_t oh = in.h / 2, ow = in.w / 2;
  PoolResult r{Tensor({in.n, in.c, oh, ow}), std::vector<std::uint32_t>(in.n * in.c * oh * ow)};
  const long planes = static_cast<long>(in.n * in.c);

#pragma omp parallel for schedule(static)
  for (long p = 0; p < planes; ++p) {
    const double* src = input.data().data() + static_cast<std::size_t>(p) * in.plane();
    const std::size_t base = static_cast<std::size_t>(p) * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t cand[4] = {2 * y * in.w + 2 * x, 2 * y * in.w + 2 * x + 1, (2 * y + 1) * in.w + 2 * x,
                                     (2 * y + 1) * in.w + 2 * x + 1};
        std::size_t arg = cand[0];
        for (int i = 1; i < 4; ++i)
          if (src[cand[i]] > src[arg]) arg = cand[i];
        r.output[base + y * ow + x] = src[arg];
        r.argmax[base + y * ow + x] = static_cast<std::uint32_t>(arg);
      }
  }
  return r;
}

Tensor max_pool2_backward(const Tensor& grad_output, const std::vector<std::uint32_t>& argmax, const Shape& in) {
  require_same_shape(grad_output.shape(), {in.n, in.c, in.h / 2, in.w / 2}, "max_pool2 backward");
  Tensor g(in);
  const std::size_t out_plane = (in.h / 2) * (in.w / 2);
  const long planes = static_cast<long>(in.n * in.c);

#pragma omp parallel for schedule(static)
  for (long p = 0; p < planes; ++p) {
    double* gi = g.data().data() + static_cast<std::size_t>(p) * in.plane();
    const std::size_t base = static_cast<std::size_t>(p) * out_plane;
    for (std::size_t o = 0; o < out_plane; ++o) gi[argmax[base + o]] += grad_output[base + o];
  }
  return g;
}

BatchNormStats batch_norm_train_forward(const Tensor& input, const std::vector<double>& scale,
                                        const std::vector<double>& shift, double eps) {
  const Shape s = input.shape();
  BatchNormStats st{Tensor(s), Tensor(s), std::vector<double>(s.c), std::vector<double>(s.c), std::vector<double>(s.c)};
  const double count = static_cast<double>(s.n * s.plane());
  const long channels = static_cast<long>(s.c);

#pragma omp parallel for schedule(static)
  for (long cl = 0; cl < channels; ++cl) {
    const auto c = static_cast<std::size_t>(cl);
    double sum = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* x = input.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) sum += x[i];
    }
    const double mean = sum / count;
    double sq = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* x = input.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) sq += (x[i] - mean) * (x[i] - mean);
    }
    const double var = sq / count;
    const double inv = 1.0 / std::sqrt(var + eps);
    st.mean[c] = mean;
    st.var[c] = var;
    st.inv_std[c] = inv;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* x = input.plane(n, c);
      double* xh = st.normalized.plane(n, c);
      double* y = st.output.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        xh[i] = (x[i] - mean) * inv;
        y[i] = scale[c] * xh[i] + shift[c];
      }
    }
  }
  return st;
}

BatchNormGrads batch_norm_train_backward(const BatchNormStats& st, const std::vector<double>& scale,
                                         const Tensor& grad_output) {
  const Shape s = grad_output.shape();
  require_same_shape(s, st.normalized.shape(), "batch_norm backward");
  BatchNormGrads g{Tensor(s), std::vector<double>(s.c), std::vector<double>(s.c)};
  const double count = static_cast<double>(s.n * s.plane());
  const long channels = static_cast<long>(s.c);

#pragma omp parallel for schedule(static)
  for (long cl = 0; cl < channels; ++cl) {
    const auto c = static_cast<std::size_t>(cl);
    double sg = 0, sgx = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* go = grad_output.plane(n, c);
      const double* xh = st.normalized.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        sg += go[i];
        sgx += go[i] * xh[i];
      }
    }
    g.shift[c] = sg;
    g.scale[c] = sgx;
    const double k = scale[c] * st.inv_std[c] / count;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* go = grad_output.plane(n, c);
      const double* xh = st.normalized.plane(n, c);
      double* gi = g.input.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) gi[i] = k * (count * go[i] - sg - xh[i] * sgx);
    }
  }
  return g;
}

}  // namespace tgvunet::kernels::parallel
