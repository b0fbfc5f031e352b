// Reference kernels. Straight loops, no blocking, no threads; the parallel
// versions are tested against these.

#include <cmath>
#include <limits>

#include "tgvunet/kernels.hpp"

namespace tgvunet::kernels {

Shape conv2d_output_shape(const Shape& in, const Shape& wt, std::size_t bias_len, int padding) {
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0, got " + std::to_string(padding));
  if (wt.h != wt.w || wt.h % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square with odd size, got " + std::to_string(wt.h) + "x" +
                     std::to_string(wt.w));
  }
  if (in.c != wt.c) {
    throw ShapeError("conv2d: input channels (c=" + std::to_string(in.c) + ") do not match weight c_in=" +
                     std::to_string(wt.c));
  }
  if (bias_len != wt.n) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias_len) + " does not match c_out=" +
                     std::to_string(wt.n));
  }
  const auto p2 = static_cast<std::size_t>(2 * padding);
  if (in.h + p2 < wt.h || in.w + p2 < wt.w) {
    throw ShapeError("conv2d: kernel " + std::to_string(wt.h) + " larger than padded input " + in.str());
  }
  return {in.n, wt.n, in.h + p2 - wt.h + 1, in.w + p2 - wt.w + 1};
}

std::size_t conv_transpose2d_crop(std::size_t kernel, int stride) {
  const std::size_t overshoot = kernel - static_cast<std::size_t>(stride);
  return (overshoot + 1) / 2;
}

Shape conv_transpose2d_output_shape(const Shape& in, const Shape& wt, int stride) {
  if (stride < 1) throw ShapeError("transpose conv: stride must be >= 1");
  if (wt.h != wt.w) throw ShapeError("transpose conv: kernel must be square");
  if (wt.h < static_cast<std::size_t>(stride)) {
    throw ShapeError("transpose conv: kernel size " + std::to_string(wt.h) + " < stride " + std::to_string(stride));
  }
  if (in.c != wt.n) {
    throw ShapeError("transpose conv: input channels (c=" + std::to_string(in.c) + ") do not match weight c_in=" +
                     std::to_string(wt.n));
  }
  const auto s = static_cast<std::size_t>(stride);
  return {in.n, wt.c, in.h * s, in.w * s};
}

std::vector<BilinearTap> bilinear_taps(std::size_t in_size) {
  std::vector<BilinearTap> taps(2 * in_size);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src <= 0.0) {
      taps[o] = {0, 0, 0.0};
      continue;
    }
    const auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo + 1 >= in_size) {
      taps[o] = {in_size - 1, in_size - 1, 0.0};
      continue;
    }
    taps[o] = {lo, lo + 1, src - static_cast<double>(lo)};
  }
  return taps;
}

namespace serial {

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, int padding) {
  const Shape& in = input.shape();
  const Shape& wt = weight.shape();
  const Shape os = conv2d_output_shape(in, wt, bias.size(), padding);
  Tensor out(os);
  const auto k = static_cast<long>(wt.h);
  for (std::size_t n = 0; n < os.n; ++n)
    for (std::size_t co = 0; co < os.c; ++co)
      for (std::size_t oy = 0; oy < os.h; ++oy)
        for (std::size_t ox = 0; ox < os.w; ++ox) {
          double acc = bias[co];
          for (std::size_t ci = 0; ci < in.c; ++ci)
            for (long ky = 0; ky < k; ++ky)
              for (long kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(oy) + ky - padding;
                const long ix = static_cast<long>(ox) + kx - padding;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(in.h) || ix >= static_cast<long>(in.w)) continue;
                acc += weight.at(co, ci, ky, kx) * input.at(n, ci, iy, ix);
              }
          out.at(n, co, oy, ox) = acc;
        }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output, int padding) {
  const Shape& in = input.shape();
  const Shape& wt = weight.shape();
  const Shape os = conv2d_output_shape(in, wt, wt.n, padding);
  require_same_shape(grad_output.shape(), os, "conv2d backward");
  Conv2dGrads g{Tensor(in), Tensor(wt), Tensor({1, 1, 1, wt.n})};
  const auto k = static_cast<long>(wt.h);
  for (std::size_t n = 0; n < os.n; ++n)
    for (std::size_t co = 0; co < os.c; ++co)
      for (std::size_t oy = 0; oy < os.h; ++oy)
        for (std::size_t ox = 0; ox < os.w; ++ox) {
          const double go = grad_output.at(n, co, oy, ox);
          g.bias[co] += go;
          for (std::size_t ci = 0; ci < in.c; ++ci)
            for (long ky = 0; ky < k; ++ky)
              for (long kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(oy) + ky - padding;
                const long ix = static_cast<long>(ox) + kx - padding;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(in.h) || ix >= static_cast<long>(in.w)) continue;
                g.weight.at(co, ci, ky, kx) += go * input.at(n, ci, iy, ix);
                g.input.at(n, ci, iy, ix) += go * weight.at(co, ci, ky, kx);
              }
        }
  return g;
}

Tensor conv_transpose2d_forward(const Tensor& input, const Tensor& weight, int stride) {
  const Shape& in = input.shape();
  const Shape& wt = weight.shape();
  const Shape os = conv_transpose2d_output_shape(in, wt, stride);
  const auto crop = static_cast<long>(conv_transpose2d_crop(wt.h, stride));
  Tensor out(os);
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t ci = 0; ci < in.c; ++ci)
      for (std::size_t iy = 0; iy < in.h; ++iy)
        for (std::size_t ix = 0; ix < in.w; ++ix)
          for (std::size_t co = 0; co < wt.c; ++co)
            for (std::size_t ky = 0; ky < wt.h; ++ky)
              for (std::size_t kx = 0; kx < wt.w; ++kx) {
                const long oy = static_cast<long>(iy) * stride + static_cast<long>(ky) - crop;
                const long ox = static_cast<long>(ix) * stride + static_cast<long>(kx) - crop;
                if (oy < 0 || ox < 0 || oy >= static_cast<long>(os.h) || ox >= static_cast<long>(os.w)) continue;
                out.at(n, co, oy, ox) += weight.at(ci, co, ky, kx) * input.at(n, ci, iy, ix);
              }
  return out;
}

ConvTransposeGrads conv_transpose2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,
                                             int stride) {
  const Shape& in = input.shape();
  const Shape& wt = weight.shape();
  const Shape os = conv_transpose2d_output_shape(in, wt, stride);
  require_same_shape(grad_output.shape(), os, "transpose conv backward");
  const auto crop = static_cast<long>(conv_transpose2d_crop(wt.h, stride));
  ConvTransposeGrads g{Tensor(in), Tensor(wt)};
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t ci = 0; ci < in.c; ++ci)
      for (std::size_t iy = 0; iy < in.h; ++iy)
        for (std::size_t ix = 0; ix < in.w; ++ix)
          for (std::size_t co = 0; co < wt.c; ++co)
            for (std::size_t ky = 0; ky < wt.h; ++ky)
              for (std::size_t kx = 0; kx < wt.w; ++kx) {
                const long oy = static_cast<long>(iy) * stride + static_cast<long>(ky) - crop;
                const long ox = static_cast<long>(ix) * stride + static_cast<long>(kx) - crop;
                if (oy < 0 || ox < 0 || oy >= static_cast<long>(os.h) || ox >= static_cast<long>(os.w)) continue;
                const double go = grad_output.at(n, co, oy, ox);
                g.input.at(n, ci, iy, ix) += go * weight.at(ci, co, ky, kx);
                g.weight.at(ci, co, ky, kx) += go * input.at(n, ci, iy, ix);
              }
  return g;
}

Tensor bilinear_upsample2x(const Tensor& input) {
  const Shape& in = input.shape();
  const auto ty = bilinear_taps(in.h);
  const auto tx = bilinear_taps(in.w);
  Tensor out({in.n, in.c, 2 * in.h, 2 * in.w});
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t c = 0; c < in.c; ++c)
      for (std::size_t oy = 0; oy < 2 * in.h; ++oy)
        for (std::size_t ox = 0; ox < 2 * in.w; ++ox) {
          const auto& a = ty[oy];
          const auto& b = tx[ox];
          const double top = input.at(n, c, a.lo, b.lo) + b.t * (input.at(n, c, a.lo, b.hi) - input.at(n, c, a.lo, b.lo));
          const double bot = input.at(n, c, a.hi, b.lo) + b.t * (input.at(n, c, a.hi, b.hi) - input.at(n, c, a.hi, b.lo));
          out.at(n, c, oy, ox) = top + a.t * (bot - top);
        }
  return out;
}

Tensor bilinear_upsample2x_adjoint(const Tensor& grad_output, const Shape& in) {
  require_same_shape(grad_output.shape(), {in.n, in.c, 2 * in.h, 2 * in.w}, "bilinear upsample backward");
  const auto ty = bilinear_taps(in.h);
  const auto tx = bilinear_taps(in.w);
  Tensor g(in);
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t c = 0; c < in.c; ++c)
      for (std::size_t oy = 0; oy < 2 * in.h; ++oy)
        for (std::size_t ox = 0; ox < 2 * in.w; ++ox) {
          const auto& a = ty[oy];
          const auto& b = tx[ox];
          const double go = grad_output.at(n, c, oy, ox);
          g.at(n, c, a.lo, b.lo) += go * (1 - a.t) * (1 - b.t);
          g.at(n, c, a.lo, b.hi) += go * (1 - a.t) * b.t;
          g.at(n, c, a.hi, b.lo) += go * a.t * (1 - b.t);
          g.at(n, c, a.hi, b.hi) += go * a.t * b.t;
        }
  return g;
}

PoolResult max_pool2_forward(const Tensor& input) {
  const Shape& in = input.shape();
  if (in.h % 2 != 0 || in.w % 2 != 0) throw ShapeError("max_pool2: spatial dims must be even, got " + in.str());
  PoolResult r{Tensor({in.n, in.c, in.h / 2, in.w / 2}), {}};
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t c = 0; c < in.c; ++c)
      for (std::size_t y = 0; y < in.h / 2; ++y)
        for (std::size_t x = 0; x < in.w / 2; ++x, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::uint32_t arg = 0;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const double v = input.at(n, c, 2 * y + dy, 2 * x + dx);
              if (v > best) {
                best = v;
                arg = static_cast<std::uint32_t>((2 * y + dy) * in.w + 2 * x + dx);
              }
            }
          r.output[o] = best;
          r.argmax[o] = arg;
        }
  return r;
}

Tensor max_pool2_backward(const Tensor& grad_output, const std::vector<std::uint32_t>& argmax, const Shape& in) {
  require_same_shape(grad_output.shape(), {in.n, in.c, in.h / 2, in.w / 2}, "max_pool2 backward");
  Tensor g(in);
  const std::size_t out_plane = (in.h / 2) * (in.w / 2);
  for (std::size_t o = 0; o < grad_output.size(); ++o) {
    const std::size_t plane = o / out_plane;
    g[plane * in.plane() + argmax[o]] += grad_output[o];
  }
  return g;
}

BatchNormStats batch_norm_train_forward(const Tensor& input, const std::vector<double>& scale,
                                        const std::vector<double>& shift, double eps) {
  const Shape& s = input.shape();
  BatchNormStats st{Tensor(s), Tensor(s), std::vector<double>(s.c), std::vector<double>(s.c), std::vector<double>(s.c)};
  const double count = static_cast<double>(s.n * s.plane());
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum = 0;
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < s.plane(); ++i) sum += input.plane(n, c)[i];
    const double mean = sum / count;
    double sq = 0;
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const double d = input.plane(n, c)[i] - mean;
        sq += d * d;
      }
    const double var = sq / count;
    const double inv = 1.0 / std::sqrt(var + eps);
    st.mean[c] = mean;
    st.var[c] = var;
    st.inv_std[c] = inv;
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const double xh = (input.plane(n, c)[i] - mean) * inv;
        st.normalized.plane(n, c)[i] = xh;
        st.output.plane(n, c)[i] = scale[c] * xh + shift[c];
      }
  }
  return st;
}

BatchNormGrads batch_norm_train_backward(const BatchNormStats& st, const std::vector<double>& scale,
                                         const Tensor& grad_output) {
  const Shape& s = grad_output.shape();
  require_same_shape(s, st.normalized.shape(), "batch_norm backward");
  BatchNormGrads g{Tensor(s), std::vector<double>(s.c), std::vector<double>(s.c)};
  const double count = static_cast<double>(s.n * s.plane());
  for (std::size_t c = 0; c < s.c; ++c) {
    double sg = 0, sgx = 0;
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < s.plane(); ++i) {
        sg += grad_output.plane(n, c)[i];
        sgx += grad_output.plane(n, c)[i] * st.normalized.plane(n, c)[i];
      }
    g.shift[c] = sg;
    g.scale[c] = sgx;
    const double k = scale[c] * st.inv_std[c] / count;
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < s.plane(); ++i) {
        g.input.plane(n, c)[i] =
            k * (count * grad_output.plane(n, c)[i] - sg - st.normalized.plane(n, c)[i] * sgx);
      }
  }
  return g;
}

}  // namespace serial
}  // namespace tgvunet::kernels
