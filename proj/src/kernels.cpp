#include "kernels.hpp"

#include <vector>

namespace pdd::kernels {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c) {
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = c + i * n;
      const double* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (trans_a && !trans_b) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* acol = a + p * m;
      const double* brow = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double av = acol[i];
        if (av == 0.0) continue;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b + j * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        c[i * n + j] += acc;
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
        c[i * n + j] += acc;
      }
    }
  }
}

ConvGeometry conv_geometry(const Shape& input, const Shape& weight, std::size_t stride, std::size_t padding) {
  if (input.size() != 4 || weight.size() != 4 || input[1] != weight[1] || stride == 0) {
    throw ShapeError("conv2d: input " + shape_string(input) + " incompatible with weight " + shape_string(weight));
  }
  ConvGeometry g{};
  g.batch = input[0];
  g.channels = input[1];
  g.height = input[2];
  g.width = input[3];
  g.out_channels = weight[0];
  g.kernel_h = weight[2];
  g.kernel_w = weight[3];
  g.stride = stride;
  g.padding = padding;
  if (g.height + 2 * padding < g.kernel_h || g.width + 2 * padding < g.kernel_w) {
    throw ShapeError("conv2d: kernel " + shape_string(weight) + " larger than padded input " + shape_string(input));
  }
  g.out_h = (g.height + 2 * padding - g.kernel_h) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kernel_w) / stride + 1;
  return g;
}

namespace {

// col is [patch, out_plane].
void im2col(const double* x, const ConvGeometry& g, double* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* plane = x + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        double* out = col + row * g.out_plane();
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const auto si = static_cast<std::ptrdiff_t>(oi * g.stride + ki) - pad;
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const auto sj = static_cast<std::ptrdiff_t>(oj * g.stride + kj) - pad;
            const bool inside = si >= 0 && sj >= 0 && si < static_cast<std::ptrdiff_t>(g.height) &&
                                sj < static_cast<std::ptrdiff_t>(g.width);
            out[oi * g.out_w + oj] = inside ? plane[si * static_cast<std::ptrdiff_t>(g.width) + sj] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, double* x) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* plane = x + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        const double* in = col + row * g.out_plane();
        for (std::size_t oi = 0; oi < g.out_h; ++oi) {
          const auto si = static_cast<std::ptrdiff_t>(oi * g.stride + ki) - pad;
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t oj = 0; oj < g.out_w; ++oj) {
            const auto sj = static_cast<std::ptrdiff_t>(oj * g.stride + kj) - pad;
            if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(g.width)) continue;
            plane[si * static_cast<std::ptrdiff_t>(g.width) + sj] += in[oi * g.out_w + oj];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv_forward(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t padding) {
  const auto g = conv_geometry(x.shape(), weight.shape(), stride, padding);
  std::vector<double> out(g.batch * g.out_channels * g.out_plane(), 0.0);
  std::vector<double> col(g.patch() * g.out_plane());
  const std::size_t in_sample = g.channels * g.height * g.width;
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(x.data() + n * in_sample, g, col.data());
    gemm(false, false, g.out_channels, g.out_plane(), g.patch(), weight.data(), col.data(),
         out.data() + n * g.out_channels * g.out_plane());
  }
  return Tensor({g.batch, g.out_channels, g.out_h, g.out_w}, std::move(out));
}

Tensor conv_input_grad(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape, std::size_t stride,
                       std::size_t padding) {
  const auto g = conv_geometry(input_shape, weight.shape(), stride, padding);
  if (grad_out.shape() != Shape{g.batch, g.out_channels, g.out_h, g.out_w}) {
    throw ShapeError("conv2d input gradient: output gradient " + shape_string(grad_out.shape()) +
                     " does not match input " + shape_string(input_shape));
  }
  const std::size_t in_sample = g.channels * g.height * g.width;
  std::vector<double> out(g.batch * in_sample, 0.0);
  std::vector<double> col(g.patch() * g.out_plane());
  for (std::size_t n = 0; n < g.batch; ++n) {
    std::fill(col.begin(), col.end(), 0.0);
    gemm(true, false, g.patch(), g.out_plane(), g.out_channels, weight.data(),
         grad_out.data() + n * g.out_channels * g.out_plane(), col.data());
    col2im(col.data(), g, out.data() + n * in_sample);
  }
  return Tensor(input_shape, std::move(out));
}

Tensor conv_weight_grad(const Tensor& x, const Tensor& grad_out, const Shape& weight_shape, std::size_t stride,
                        std::size_t padding) {
  const auto g = conv_geometry(x.shape(), weight_shape, stride, padding);
  if (grad_out.shape() != Shape{g.batch, g.out_channels, g.out_h, g.out_w}) {
    throw ShapeError("conv2d weight gradient: output gradient " + shape_string(grad_out.shape()) +
                     " does not match input " + shape_string(x.shape()));
  }
  std::vector<double> out(element_count(weight_shape), 0.0);
  std::vector<double> col(g.patch() * g.out_plane());
  const std::size_t in_sample = g.channels * g.height * g.width;
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(x.data() + n * in_sample, g, col.data());
    gemm(false, true, g.out_channels, g.patch(), g.out_plane(), grad_out.data() + n * g.out_channels * g.out_plane(),
         col.data(), out.data());
  }
  return Tensor(weight_shape, std::move(out));
}

}  // namespace pdd::kernels
