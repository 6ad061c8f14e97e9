#pragma once

// Raw numeric loops shared by the differentiable primitives. Nothing here
// records graph nodes.

#include <cstddef>

#include "pdd/tensor.hpp"

namespace pdd::kernels {

/// C[m, n] += op(A) * op(B), where op transposes when requested.
/// A is [m, k] (or [k, m] when trans_a), B is [k, n] (or [n, k] when trans_b).
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c);

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch() const { return channels * kernel_h * kernel_w; }
  std::size_t out_plane() const { return out_h * out_w; }
};

/// Validates shapes and derives the output extents.
ConvGeometry conv_geometry(const Shape& input, const Shape& weight, std::size_t stride, std::size_t padding);

Tensor conv_forward(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t padding);
Tensor conv_input_grad(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape, std::size_t stride,
                       std::size_t padding);
Tensor conv_weight_grad(const Tensor& x, const Tensor& grad_out, const Shape& weight_shape, std::size_t stride,
                        std::size_t padding);

}  // namespace pdd::kernels
