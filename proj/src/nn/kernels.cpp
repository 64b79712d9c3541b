#include "lmbreak/nn/kernels.hpp"

#include <Eigen/Core>
#include <cmath>
#include <vector>

namespace lmb::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// col: (in_channels * k * k) x (out_h * out_w), row-major.
template <typename T>
void im2col(const Tensor<T>& in, const ConvShape& s, int out_h, int out_w, std::vector<T>& col) {
  const int k = s.kernel;
  const std::size_t n = static_cast<std::size_t>(out_h) * out_w;
  col.resize(static_cast<std::size_t>(s.in_channels) * k * k * n);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < s.in_channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * n;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= in.height) {
            for (int ox = 0; ox < out_w; ++ox) dst[ox] = T(0);
            continue;
          }
          const T* src = in.data.data() + (c * in.plane()) + static_cast<std::size_t>(iy) * in.width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            dst[ox] = (ix >= 0 && ix < in.width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const std::vector<T>& col, const ConvShape& s, int out_h, int out_w, Tensor<T>& d_in) {
  const int k = s.kernel;
  const std::size_t n = static_cast<std::size_t>(out_h) * out_w;
  std::fill(d_in.data.begin(), d_in.data.end(), T(0));
#pragma omp parallel for schedule(static)
  for (int c = 0; c < s.in_channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * n;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= d_in.height) continue;
          T* dst = d_in.data.data() + (c * d_in.plane()) + static_cast<std::size_t>(iy) * d_in.width;
          const T* src = row + static_cast<std::size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            if (ix >= 0 && ix < d_in.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
bool is_pointwise(const ConvShape& s) {
  return s.kernel == 1 && s.stride == 1 && s.pad == 0;
}

}  // namespace

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias, const ConvShape& s,
                    Tensor<T>& out) {
  const int oh = s.out_extent(in.height);
  const int ow = s.out_extent(in.width);
  if (!(out.channels == s.out_channels && out.height == oh && out.width == ow)) out = Tensor<T>(s.out_channels, oh, ow);
  const int kdim = s.in_channels * s.kernel * s.kernel;
  const int n = oh * ow;
  ConstMapMat<T> w(weight.data(), s.out_channels, kdim);
  MapMat<T> o(out.data.data(), s.out_channels, n);
  if (is_pointwise<T>(s)) {
    ConstMapMat<T> x(in.data.data(), kdim, n);
    o.noalias() = w * x;
  } else {
    thread_local std::vector<T> col;
    im2col(in, s, oh, ow, col);
    ConstMapMat<T> x(col.data(), kdim, n);
    o.noalias() = w * x;
  }
  for (int c = 0; c < s.out_channels; ++c) o.row(c).array() += bias[c];
}

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, const ConvShape& s, const Tensor<T>& d_out,
                     Tensor<T>* d_in, std::span<T> d_weight, std::span<T> d_bias) {
  const int oh = d_out.height;
  const int ow = d_out.width;
  const int kdim = s.in_channels * s.kernel * s.kernel;
  const int n = oh * ow;
  ConstMapMat<T> dy(d_out.data.data(), s.out_channels, n);
  const bool pointwise = is_pointwise<T>(s);
  thread_local std::vector<T> col;
  if (!d_weight.empty()) {
    MapMat<T> dw(d_weight.data(), s.out_channels, kdim);
    if (pointwise) {
      ConstMapMat<T> x(in.data.data(), kdim, n);
      dw.noalias() += dy * x.transpose();
    } else {
      im2col(in, s, oh, ow, col);
      ConstMapMat<T> x(col.data(), kdim, n);
      dw.noalias() += dy * x.transpose();
    }
  }
  if (!d_bias.empty()) {
    // plain loop: Eigen's vectorised sum peels to the buffer's alignment, so
    // its rounding would depend on where the allocator put d_out
    for (int c = 0; c < s.out_channels; ++c) {
      T sum = 0;
      const T* row = d_out.data.data() + static_cast<std::size_t>(c) * n;
      for (int i = 0; i < n; ++i) sum += row[i];
      d_bias[c] += sum;
    }
  }
  if (d_in != nullptr) {
    if (!d_in->same_shape(in)) *d_in = Tensor<T>(in.channels, in.height, in.width);
    ConstMapMat<T> w(weight.data(), s.out_channels, kdim);
    if (pointwise) {
      MapMat<T> dx(d_in->data.data(), kdim, n);
      dx.noalias() = w.transpose() * dy;
    } else {
      col.resize(static_cast<std::size_t>(kdim) * n);
      MapMat<T> dcol(col.data(), kdim, n);
      dcol.noalias() = w.transpose() * dy;
      col2im(col, s, oh, ow, *d_in);
    }
  }
}

template <typename T>
void silu_forward(const Tensor<T>& in, Tensor<T>& out) {
  if (!out.same_shape(in)) out = Tensor<T>(in.channels, in.height, in.width);
  const std::size_t n = in.size();
  const T* x = in.data.data();
  T* y = out.data.data();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] / (T(1) + std::exp(-x[i]));
}

template <typename T>
void silu_backward(const Tensor<T>& in, const Tensor<T>& d_out, Tensor<T>& d_in) {
  if (!d_in.same_shape(in)) d_in = Tensor<T>(in.channels, in.height, in.width);
  const std::size_t n = in.size();
  const T* x = in.data.data();
  const T* dy = d_out.data.data();
  T* dx = d_in.data.data();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const T sig = T(1) / (T(1) + std::exp(-x[i]));
    dx[i] = dy[i] * sig * (T(1) + x[i] * (T(1) - sig));
  }
}

template <typename T>
void upsample_nearest_forward(const Tensor<T>& in, int f, Tensor<T>& out) {
  if (!(out.channels == in.channels && out.height == in.height * f && out.width == in.width * f))
    out = Tensor<T>(in.channels, in.height * f, in.width * f);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) out.at(c, y, x) = in.at(c, y / f, x / f);
}

template <typename T>
void upsample_nearest_backward(const Tensor<T>& d_out, int f, Tensor<T>& d_in) {
  const int h = d_out.height / f;
  const int w = d_out.width / f;
  if (!(d_in.channels == d_out.channels && d_in.height == h && d_in.width == w))
    d_in = Tensor<T>(d_out.channels, h, w);
  std::fill(d_in.data.begin(), d_in.data.end(), T(0));
#pragma omp parallel for schedule(static)
  for (int c = 0; c < d_out.channels; ++c)
    for (int y = 0; y < d_out.height; ++y)
      for (int x = 0; x < d_out.width; ++x) d_in.at(c, y / f, x / f) += d_out.at(c, y, x);
}

namespace reference {

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias, const ConvShape& s,
                    Tensor<T>& out) {
  const int oh = s.out_extent(in.height);
  const int ow = s.out_extent(in.width);
  out = Tensor<T>(s.out_channels, oh, ow);
  const int k = s.kernel;
  for (int co = 0; co < s.out_channels; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        T acc = bias[co];
        for (int ci = 0; ci < s.in_channels; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * s.stride - s.pad + ky;
              const int ix = ox * s.stride - s.pad + kx;
              if (iy < 0 || iy >= in.height || ix < 0 || ix >= in.width) continue;
              acc += weight[((co * s.in_channels + ci) * k + ky) * k + kx] * in.at(ci, iy, ix);
            }
        out.at(co, oy, ox) = acc;
      }
}

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, const ConvShape& s, const Tensor<T>& d_out,
                     Tensor<T>* d_in, std::span<T> d_weight, std::span<T> d_bias) {
  const int k = s.kernel;
  if (d_in != nullptr) *d_in = Tensor<T>(in.channels, in.height, in.width);
  for (int co = 0; co < s.out_channels; ++co)
    for (int oy = 0; oy < d_out.height; ++oy)
      for (int ox = 0; ox < d_out.width; ++ox) {
        const T g = d_out.at(co, oy, ox);
        if (!d_bias.empty()) d_bias[co] += g;
        for (int ci = 0; ci < s.in_channels; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * s.stride - s.pad + ky;
              const int ix = ox * s.stride - s.pad + kx;
              if (iy < 0 || iy >= in.height || ix < 0 || ix >= in.width) continue;
              const std::size_t wi = static_cast<std::size_t>(((co * s.in_channels + ci) * k + ky) * k + kx);
              if (!d_weight.empty()) d_weight[wi] += g * in.at(ci, iy, ix);
              if (d_in != nullptr) d_in->at(ci, iy, ix) += g * weight[wi];
            }
      }
}

}  // namespace reference

#define LMB_INSTANTIATE(T)                                                                                        \
  template void conv2d_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>, const ConvShape&,     \
                                  Tensor<T>&);                                                                    \
  template void conv2d_backward<T>(const Tensor<T>&, std::span<const T>, const ConvShape&, const Tensor<T>&,      \
                                   Tensor<T>*, std::span<T>, std::span<T>);                                       \
  template void silu_forward<T>(const Tensor<T>&, Tensor<T>&);                                                    \
  template void silu_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);                                 \
  template void upsample_nearest_forward<T>(const Tensor<T>&, int, Tensor<T>&);                                   \
  template void upsample_nearest_backward<T>(const Tensor<T>&, int, Tensor<T>&);                                  \
  template void reference::conv2d_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,            \
                                             const ConvShape&, Tensor<T>&);                                       \
  template void reference::conv2d_backward<T>(const Tensor<T>&, std::span<const T>, const ConvShape&,             \
                                              const Tensor<T>&, Tensor<T>*, std::span<T>, std::span<T>);

LMB_INSTANTIATE(float)
LMB_INSTANTIATE(double)

#undef LMB_INSTANTIATE

}  // namespace lmb::nn
