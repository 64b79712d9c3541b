#pragma once

// Convolution and pointwise kernels. The default entry points use im2col with
// an Eigen GEMM and OpenMP over channels; the `reference` namespace holds
// direct serial loops that serve as the test oracle and benchmark baseline.

#include <span>

#include "lmbreak/nn/tensor.hpp"

namespace lmb::nn {

struct ConvShape {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_extent(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
  int weight_count() const { return out_channels * in_channels * kernel * kernel; }
};

/// weight layout: [out][in][ky][kx]; bias: [out].
template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias, const ConvShape& shape,
                    Tensor<T>& out);

/// Accumulates into d_weight / d_bias when non-empty; overwrites d_in when non-null.
template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, const ConvShape& shape, const Tensor<T>& d_out,
                     Tensor<T>* d_in, std::span<T> d_weight, std::span<T> d_bias);

template <typename T>
void silu_forward(const Tensor<T>& in, Tensor<T>& out);
template <typename T>
void silu_backward(const Tensor<T>& in, const Tensor<T>& d_out, Tensor<T>& d_in);

template <typename T>
void upsample_nearest_forward(const Tensor<T>& in, int factor, Tensor<T>& out);
template <typename T>
void upsample_nearest_backward(const Tensor<T>& d_out, int factor, Tensor<T>& d_in);

namespace reference {

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias, const ConvShape& shape,
                    Tensor<T>& out);

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, const ConvShape& shape, const Tensor<T>& d_out,
                     Tensor<T>* d_in, std::span<T> d_weight, std::span<T> d_bias);

}  // namespace reference

}  // namespace lmb::nn
