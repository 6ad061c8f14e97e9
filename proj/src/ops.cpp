#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kernels.hpp"
#include "pdd/autodiff.hpp"

namespace pdd {

namespace {

std::vector<Var> grads_of(std::initializer_list<Var> g) { return std::vector<Var>(g); }

Tensor unary_map(const Tensor& x, double (*f)(double)) {
  std::vector<double> out(x.size());
  const double* in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor(x.shape(), std::move(out));
}

template <typename F>
Tensor binary_map(const Tensor& a, const Tensor& b, F f) {
  std::vector<double> out(a.size());
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(pa[i], pb[i]);
  return Tensor(a.shape(), std::move(out));
}

Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) +
                       " do not broadcast");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `small` aligned right against `big`, zero on broadcast axes.
std::vector<std::size_t> aligned_strides(const Shape& small, const Shape& big) {
  std::vector<std::size_t> strides(big.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < small.size(); ++k) {
    const std::size_t i = small.size() - 1 - k;
    const std::size_t j = big.size() - 1 - k;
    strides[j] = small[i] == 1 ? 0 : stride;
    stride *= small[i];
  }
  return strides;
}

// Calls f(big_index, small_index) for every element of `big`.
template <typename F>
void for_each_aligned(const Shape& small, const Shape& big, F f) {
  const auto strides = aligned_strides(small, big);
  const std::size_t total = element_count(big);
  std::vector<std::size_t> counter(big.size(), 0);
  std::size_t small_index = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    f(flat, small_index);
    for (std::size_t d = big.size(); d-- > 0;) {
      ++counter[d];
      small_index += strides[d];
      if (counter[d] < big[d]) break;
      small_index -= strides[d] * big[d];
      counter[d] = 0;
    }
  }
}

Tensor broadcast_kernel(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  std::vector<double> out(element_count(shape));
  const double* in = x.data();
  for_each_aligned(x.shape(), shape, [&](std::size_t o, std::size_t i) { out[o] = in[i]; });
  return Tensor(shape, std::move(out));
}

Tensor sum_to_kernel(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  std::vector<double> out(element_count(shape), 0.0);
  const double* in = x.data();
  for_each_aligned(shape, x.shape(), [&](std::size_t i, std::size_t o) { out[o] += in[i]; });
  return Tensor(shape, std::move(out));
}

void check_broadcastable(const Shape& small, const Shape& big, std::string_view op) {
  if (small.size() > big.size() || broadcast_shape(small, big, op) != big) {
    throw ShapeError(std::string(op) + ": cannot relate " + shape_string(small) + " and " + shape_string(big));
  }
}

using Combine = double (*)(double, double);

Var elementwise(OpKind kind, const Var& a, const Var& b, Combine combine, Backward backward) {
  const std::string_view name = op_name(kind);
  const Shape out = broadcast_shape(a.shape(), b.shape(), name);
  const Var lhs = a.shape() == out ? a : broadcast_to(a, out);
  const Var rhs = b.shape() == out ? b : broadcast_to(b, out);
  return make_op(
      kind, {lhs, rhs}, [combine](std::span<const Tensor> in) { return binary_map(in[0], in[1], combine); },
      std::move(backward));
}

Tensor step_mask(const Tensor& x, double threshold) {
  std::vector<double> mask(x.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = x[i] > threshold ? 1.0 : 0.0;
  return Tensor(x.shape(), std::move(mask));
}

Var conv_input_grad_op(const Var& grad_out, const Var& weight, const Shape& input_shape, Conv2dOptions opt);
Var conv_weight_grad_op(const Var& x, const Var& grad_out, const Shape& weight_shape, Conv2dOptions opt);

Var conv_input_grad_op(const Var& grad_out, const Var& weight, const Shape& input_shape, Conv2dOptions opt) {
  return make_op(
      OpKind::Conv2dInputGrad, {grad_out, weight},
      [input_shape, opt](std::span<const Tensor> in) {
        return kernels::conv_input_grad(in[0], in[1], input_shape, opt.stride, opt.padding);
      },
      [opt](const Var& g, std::span<const Var> in, const Var&, const std::vector<bool>& need) {
        std::vector<Var> out(2);
        if (need[0]) out[0] = conv2d(g, in[1], opt);
        if (need[1]) out[1] = conv_weight_grad_op(g, in[0], in[1].shape(), opt);
        return out;
      });
}

Var conv_weight_grad_op(const Var& x, const Var& grad_out, const Shape& weight_shape, Conv2dOptions opt) {
  return make_op(
      OpKind::Conv2dWeightGrad, {x, grad_out},
      [weight_shape, opt](std::span<const Tensor> in) {
        return kernels::conv_weight_grad(in[0], in[1], weight_shape, opt.stride, opt.padding);
      },
      [opt](const Var& g, std::span<const Var> in, const Var&, const std::vector<bool>& need) {
        std::vector<Var> out(2);
        if (need[0]) out[0] = conv_input_grad_op(in[1], g, in[0].shape(), opt);
        if (need[1]) out[1] = conv2d(in[0], g, opt);
        return out;
      });
}

void check_pool_input(const Shape& shape) {
  if (shape.size() != 4 || shape[2] < 2 || shape[3] < 2) {
    throw ShapeError("avg_pool2: needs [N, C, H, W] with H, W >= 2, got " + shape_string(shape));
  }
}

Tensor pool_kernel(const Tensor& x) {
  const auto& s = x.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], oh = h / 2, ow = w / 2;
  std::vector<double> out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* in = x.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const double* top = in + (2 * i) * w + 2 * j;
        dst[i * ow + j] = 0.25 * (top[0] + top[1] + top[w] + top[w + 1]);
      }
    }
  }
  return Tensor({s[0], s[1], oh, ow}, std::move(out));
}

Tensor pool_adjoint_kernel(const Tensor& g, const Shape& input_shape) {
  const std::size_t planes = input_shape[0] * input_shape[1], h = input_shape[2], w = input_shape[3];
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<double> out(planes * h * w, 0.0);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = g.data() + p * oh * ow;
    double* dst = out.data() + p * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const double v = 0.25 * src[i * ow + j];
        double* top = dst + (2 * i) * w + 2 * j;
        top[0] = v;
        top[1] = v;
        top[w] = v;
        top[w + 1] = v;
      }
    }
  }
  return Tensor(input_shape, std::move(out));
}

Var avg_pool2_adjoint(const Var& g, const Shape& input_shape) {
  const Shape pooled{input_shape[0], input_shape[1], input_shape[2] / 2, input_shape[3] / 2};
  if (g.shape() != pooled) {
    throw ShapeError("avg_pool2_adjoint: gradient " + shape_string(g.shape()) + " does not match input " +
                     shape_string(input_shape));
  }
  return make_op(
      OpKind::AvgPool2Adjoint, {g},
      [input_shape](std::span<const Tensor> in) { return pool_adjoint_kernel(in[0], input_shape); },
      [](const Var& h, std::span<const Var>, const Var&, const std::vector<bool>&) {
        return grads_of({avg_pool2(h)});
      });
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Var slice_adjoint(const Var& g, const Shape& full_shape, std::size_t axis, std::size_t begin) {
  const std::size_t length = g.shape()[axis];
  return make_op(
      OpKind::SliceAdjoint, {g},
      [full_shape, axis, begin](std::span<const Tensor> in) {
        const auto part = split_at(in[0].shape(), axis);
        const auto full = split_at(full_shape, axis);
        std::vector<double> out(element_count(full_shape), 0.0);
        for (std::size_t o = 0; o < part.outer; ++o) {
          std::copy_n(in[0].data() + o * part.extent * part.inner, part.extent * part.inner,
                      out.data() + (o * full.extent + begin) * full.inner);
        }
        return Tensor(full_shape, std::move(out));
      },
      [axis, begin, length](const Var& h, std::span<const Var>, const Var&, const std::vector<bool>&) {
        return grads_of({slice(h, axis, begin, begin + length)});
      });
}

Tensor resample_kernel(const Tensor& x, const Sampler& s) {
  const std::size_t planes = x.shape()[0] * x.shape()[1];
  const std::size_t in_plane = s.in_height * s.in_width, out_plane = s.out_height * s.out_width;
  std::vector<double> out(planes * out_plane, 0.0);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.data() + p * in_plane;
    double* dst = out.data() + p * out_plane;
    for (std::size_t q = 0; q < out_plane; ++q) {
      double acc = 0.0;
      for (std::size_t t = s.offsets[q]; t < s.offsets[q + 1]; ++t) acc += s.taps[t].weight * src[s.taps[t].source];
      dst[q] = acc;
    }
  }
  return Tensor({x.shape()[0], x.shape()[1], s.out_height, s.out_width}, std::move(out));
}

Tensor resample_adjoint_kernel(const Tensor& g, const Sampler& s) {
  const std::size_t planes = g.shape()[0] * g.shape()[1];
  const std::size_t in_plane = s.in_height * s.in_width, out_plane = s.out_height * s.out_width;
  std::vector<double> out(planes * in_plane, 0.0);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = g.data() + p * out_plane;
    double* dst = out.data() + p * in_plane;
    for (std::size_t q = 0; q < out_plane; ++q) {
      for (std::size_t t = s.offsets[q]; t < s.offsets[q + 1]; ++t) dst[s.taps[t].source] += s.taps[t].weight * src[q];
    }
  }
  return Tensor({g.shape()[0], g.shape()[1], s.in_height, s.in_width}, std::move(out));
}

Var resample_adjoint(const Var& g, std::shared_ptr<const Sampler> sampler) {
  if (g.shape().size() != 4 || g.shape()[2] != sampler->out_height || g.shape()[3] != sampler->out_width) {
    throw ShapeError("resample_adjoint: gradient " + shape_string(g.shape()) + " does not match sampler output");
  }
  return make_op(
      OpKind::ResampleAdjoint, {g},
      [sampler](std::span<const Tensor> in) { return resample_adjoint_kernel(in[0], *sampler); },
      [sampler](const Var& h, std::span<const Var>, const Var&, const std::vector<bool>&) {
        return grads_of({resample(h, sampler)});
      });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return elementwise(
      OpKind::Add, a, b, [](double x, double y) { return x + y; },
      [](const Var& g, std::span<const Var>, const Var&, const std::vector<bool>&) { return grads_of({g, g}); });
}

Var sub(const Var& a, const Var& b) {
  return elementwise(
      OpKind::Sub, a, b, [](double x, double y) { return x - y; },
      [](const Var& g, std::span<const Var>, const Var&, const std::vector<bool>& need) {
        return grads_of({g, need[1] ? neg(g) : Var()});
      });
}

Var mul(const Var& a, const Var& b) {
  return elementwise(
      OpKind::Mul, a, b, [](double x, double y) { return x * y; },
      [](const Var& g, std::span<const Var> in, const Var&, const std::vector<bool>& need) {
        return grads_of({need[0] ? mul(g, in[1]) : Var(), need[1] ? mul(g, in[0]) : Var()});
      });
}

Var div(const Var& a, const Var& b) {
  return elementwise(
      OpKind::Div, a, b, [](double x, double y) { return x / y; },
      [](const Var& g, std::span<const Var> in, const Var& out, const std::vector<bool>& need) {
        return grads_of({need[0] ? div(g, in[1]) : Var(), need[1] ? neg(div(mul(g, out), in[1])) : Var()});
      });
}

Var neg(const Var& x) {
  return make_op(
      OpKind::Neg, {x}, [](std::span<const Tensor> in) { return unary_map(in[0], [](double v) { return -v; }); },
      [](const Var& g, std::span<const Var>, const Var&, const std::vector<bool>&) { return grads_of({neg(g)}); });
}

Var scale(const Var& x, double factor) {
  return make_op(
      OpKind::Scale, {x},
      [factor](std::span<const Tensor> in) {
        std::vector<double> out(in[0].size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[0][i] * factor;
        return Tensor(in[0].shape(), std::move(out));
      },
      [factor](const Var& g, std::span<const Var>, const Var&, const std::vector<bool>&) {
        return grads_of({scale(g, factor)});
      });
}

Var add_scalar(const Var& x, double offset) {
  return make_op(
      OpKind::AddScalar, {x},
      [offset](std::span<const Tensor> in) {
        std::vector<double> out(in[0].size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[0][i] + offset;
        return Tensor(in[0].shape(), std::move(out));
      },
      [](const Var& g, std::span<const Var>, const Var&, const std::vector<bool>&) { return grads_of({g}); });
}

Var exp(const Var& x) {
  return make_op(
      OpKind::Exp, {x}, [](std::span<const Tensor> in) { return unary_map(in[0], [](double v) { return std::exp(v); }); },
      [](const Var& g, std::span<const Var>, const Var& out, const std::vector<bool>&) {
        return grads_of({mul(g, out)});
      });
}

Var log(const Var& x) {
  return make_op(
      OpKind::Log, {x}, [](std::span<const Tensor> in) { return unary_map(in[0], [](double v) { return std::log(v); }); },
      [](const Var& g, std::span<const Var> in, const Var&, const std::vector<bool>&) {
        return grads_of({div(g, in[0])});
      });
}

Var sqrt(const Var& x) {
  return make_op(
      OpKind::Sqrt, {x},
      [](std::span<const Tensor> in) { return unary_map(in[0], [](double v) { return std::sqrt(v); }); },
      [](const Var& g, std::span<const Var>, const Var& out, const std::vector<bool>&) {
        return grads_of({div(scale(g, 0.5), out)});
      });
}

Var square(const Var& x) { return mul(x, x); }

Var relu(const Var& x) {
  return make_op(
      OpKind::Relu, {x},
      [](std::span<const Tensor> in) { return unary_map(in[0], [](double v) { return v > 0.0 ? v : 0.0; }); },
      [](const Var& g, std::span<const Var> in, const Var&, const std::vector<bool>&) {
        return grads_of({mul(g, Var::constant(step_mask(in[0].value(), 0.0)))});
      });
}

Var clamp_min(const Var& x, double floor) {
  return make_op(
      OpKind::ClampMin, {x},
      [floor](std::span<const Tensor> in) {
        std::vector<double> out(in[0].size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(in[0][i], floor);
        return Tensor(in[0].shape(), std::move(out));
      },
      [floor](const Var& g, std::span<const Var> in, const Var&, const std::vector<bool>&) {
        return grads_of({mul(g, Var::constant(step_mask(in[0].value(), floor)))});
      });
}

Var matmul(const Var& a, const Var& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw ShapeError("matmul: shapes " + shape_string(sa) + " and " + shape_string(sb) + " do not conform");
  }
  return make_op(
      OpKind::MatMul, {a, b},
      [](std::span<const Tensor> in) {
        const std::size_t m = in[0].shape()[0], k = in[0].shape()[1], n = in[1].shape()[1];
        std::vector<double> out(m * n, 0.0);
        kernels::gemm(false, false, m, n, k, in[0].data(), in[1].data(), out.data());
        return Tensor({m, n}, std::move(out));
      },
      [](const Var& g, std::span<const Var> in, const Var&, const std::vector<bool>& need) {
        return grads_of({need[0] ? matmul(g, transpose(in[1])) : Var(), need[1] ? matmul(transpose(in[0]), g) : Var()});
      });
}

Var transpose(const Var& x) {
  if (x.shape().size() != 2) throw ShapeError("transpose: needs a matrix, got " + shape_string(x.shape()));
  return make_op(
      OpKind::Transpose, {x},
      [](std::span<const Tensor> in) {
        const std::size_t r = in[0].shape()[0], c = in[0].shape()[1];
        std::vector<double> out(r * c);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[0][i * c + j];
        return Tensor({c, r}, std::move(out));
      },
      [](const Var& g, std::span<const Var>, const Var&, const std::vector<bool>&) {
        return grads_of({transpose(g)});
      });
}

Var conv2d(const Var& x, const Var& weight, Conv2dOptions options) {
  kernels::conv_geometry(x.shape(), weight.shape(), options.stride, options.padding);
  return make_op(
      OpKind::Conv2d, {x, weight},
      [options](std::span<const Tensor> in) {
        return kernels::conv_forward(in[0], in[1], options.stride, options.padding);
      },
      [options](const Var& g, std::span<const Var> in, const Var&, const std::vector<bool>& need) {
        std::vector<Var> out(2);
        if (need[0]) out[0] = conv_input_grad_op(g, in[1], in[0].shape(), options);
        if (need[1]) out[1] = conv_weight_grad_op(in[0], g, in[1].shape(), options);
        return out;
      });
}

Var avg_pool2(const Var& x) {
  check_pool_input(x.shape());
  return make_op(
      OpKind::AvgPool2, {x}, [](std::span<const Tensor> in) { return pool_kernel(in[0]); },
      [](const Var& g, std::span<const Var> in, const Var&, const std::vector<bool>&) {
        return grads_of({avg_pool2_adjoint(g, in[0].shape())});
      });
}

Var instance_norm(const Var& x, double eps) {
  const auto& s = x.shape();
  if (s.size() != 4) throw ShapeError("instance_norm: needs [N, C, H, W], got " + shape_string(s));
  const Shape stats{s[0], s[1], 1, 1};
  const double inv_count = 1.0 / static_cast<double>(s[2] * s[3]);
  const Var centered = sub(x, scale(sum_to(x, stats), inv_count));
  const Var variance = scale(sum_to(square(centered), stats), inv_count);
  return div(centered, sqrt(add_scalar(variance, eps)));
}

Var logsumexp(const Var& x) {
  const auto& s = x.shape();
  if (s.empty()) throw ShapeError("logsumexp: needs rank >= 1");
  const Shape out_shape(s.begin(), s.end() - 1);
  return make_op(
      OpKind::LogSumExp, {x},
      [out_shape](std::span<const Tensor> in) {
        const std::size_t k = in[0].shape().back();
        const std::size_t rows = in[0].size() / k;
        std::vector<double> out(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* row = in[0].data() + r * k;
          const double peak = *std::max_element(row, row + k);
          double acc = 0.0;
          for (std::size_t c = 0; c < k; ++c) acc += std::exp(row[c] - peak);
          out[r] = peak + std::log(acc);
        }
        return Tensor(out_shape, std::move(out));
      },
      [](const Var& g, std::span<const Var> in, const Var& out, const std::vector<bool>&) {
        Shape keep = out.shape();
        keep.push_back(1);
        const Shape& full = in[0].shape();
        const Var softmax = exp(sub(in[0], broadcast_to(reshape(out, keep), full)));
        return grads_of({mul(broadcast_to(reshape(g, keep), full), softmax)});
      });
}

Var reshape(const Var& x, Shape shape) {
  if (element_count(shape) != x.value().size()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  if (shape == x.shape()) return x;
  return make_op(
      OpKind::Reshape, {x}, [shape](std::span<const Tensor> in) { return in[0].reshape(shape); },
      [](const Var& g, std::span<const Var> in, const Var&, const std::vector<bool>&) {
        return grads_of({reshape(g, in[0].shape())});
      });
}

Var broadcast_to(const Var& x, const Shape& shape) {
  check_broadcastable(x.shape(), shape, "broadcast_to");
  if (x.shape() == shape) return x;
  return make_op(
      OpKind::BroadcastTo, {x}, [shape](std::span<const Tensor> in) { return broadcast_kernel(in[0], shape); },
      [](const Var& g, std::span<const Var> in, const Var&, const std::vector<bool>&) {
        return grads_of({sum_to(g, in[0].shape())});
      });
}

Var sum_to(const Var& x, const Shape& shape) {
  check_broadcastable(shape, x.shape(), "sum_to");
  if (x.shape() == shape) return x;
  return make_op(
      OpKind::SumTo, {x}, [shape](std::span<const Tensor> in) { return sum_to_kernel(in[0], shape); },
      [](const Var& g, std::span<const Var> in, const Var&, const std::vector<bool>&) {
        return grads_of({broadcast_to(g, in[0].shape())});
      });
}

Var sum(const Var& x) { return sum_to(x, Shape{}); }

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> offsets;
  for (const auto& part : parts) {
    const Shape& s = part.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat: shapes " + shape_string(first) + " and " + shape_string(s) + " do not conform");
    offsets.push_back(out_shape[axis]);
    out_shape[axis] += s[axis];
  }
  if (parts.size() == 1) return parts[0];
  return make_op(
      OpKind::Concat, std::vector<Var>(parts.begin(), parts.end()),
      [out_shape, axis, offsets](std::span<const Tensor> in) {
        const auto full = split_at(out_shape, axis);
        std::vector<double> out(element_count(out_shape));
        for (std::size_t k = 0; k < in.size(); ++k) {
          const auto part = split_at(in[k].shape(), axis);
          for (std::size_t o = 0; o < part.outer; ++o) {
            std::copy_n(in[k].data() + o * part.extent * part.inner, part.extent * part.inner,
                        out.data() + (o * full.extent + offsets[k]) * full.inner);
          }
        }
        return Tensor(out_shape, std::move(out));
      },
      [axis, offsets](const Var& g, std::span<const Var> in, const Var&, const std::vector<bool>& need) {
        std::vector<Var> out(in.size());
        for (std::size_t k = 0; k < in.size(); ++k) {
          if (need[k]) out[k] = slice(g, axis, offsets[k], offsets[k] + in[k].shape()[axis]);
        }
        return out;
      });
}

Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for " + shape_string(s));
  }
  if (begin == 0 && end == s[axis]) return x;
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  return make_op(
      OpKind::Slice, {x},
      [out_shape, axis, begin](std::span<const Tensor> in) {
        const auto full = split_at(in[0].shape(), axis);
        const auto part = split_at(out_shape, axis);
        std::vector<double> out(element_count(out_shape));
        for (std::size_t o = 0; o < part.outer; ++o) {
          std::copy_n(in[0].data() + (o * full.extent + begin) * full.inner, part.extent * part.inner,
                      out.data() + o * part.extent * part.inner);
        }
        return Tensor(out_shape, std::move(out));
      },
      [axis, begin](const Var& g, std::span<const Var> in, const Var&, const std::vector<bool>&) {
        return grads_of({slice_adjoint(g, in[0].shape(), axis, begin)});
      });
}

Sampler Sampler::bilinear(std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w,
                          const std::function<std::pair<double, double>(double, double)>& source_of) {
  Sampler s;
  s.in_height = in_h;
  s.in_width = in_w;
  s.out_height = out_h;
  s.out_width = out_w;
  s.offsets.reserve(out_h * out_w + 1);
  s.offsets.push_back(0);
  for (std::size_t r = 0; r < out_h; ++r) {
    for (std::size_t c = 0; c < out_w; ++c) {
      const auto [sr, sc] = source_of(static_cast<double>(r), static_cast<double>(c));
      const double r0 = std::floor(sr), c0 = std::floor(sc);
      const double fr = sr - r0, fc = sc - c0;
      const double weights[4] = {(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc};
      const double rows[4] = {r0, r0, r0 + 1, r0 + 1};
      const double cols[4] = {c0, c0 + 1, c0, c0 + 1};
      for (int t = 0; t < 4; ++t) {
        if (weights[t] == 0.0) continue;
        if (rows[t] < 0 || cols[t] < 0 || rows[t] >= static_cast<double>(in_h) ||
            cols[t] >= static_cast<double>(in_w)) {
          continue;
        }
        const auto index = static_cast<std::uint32_t>(rows[t]) * static_cast<std::uint32_t>(in_w) +
                           static_cast<std::uint32_t>(cols[t]);
        s.taps.push_back({index, weights[t]});
      }
      s.offsets.push_back(s.taps.size());
    }
  }
  return s;
}

Var resample(const Var& x, std::shared_ptr<const Sampler> sampler) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[2] != sampler->in_height || s[3] != sampler->in_width) {
    throw ShapeError("resample: input " + shape_string(s) + " does not match sampler " +
                     std::to_string(sampler->in_height) + "x" + std::to_string(sampler->in_width));
  }
  return make_op(
      OpKind::Resample, {x}, [sampler](std::span<const Tensor> in) { return resample_kernel(in[0], *sampler); },
      [sampler](const Var& g, std::span<const Var>, const Var&, const std::vector<bool>&) {
        return grads_of({resample_adjoint(g, sampler)});
      });
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator/(const Var& a, const Var& b) { return div(a, b); }
Var operator-(const Var& x) { return neg(x); }
Var operator*(const Var& x, double factor) { return scale(x, factor); }
Var operator*(double factor, const Var& x) { return scale(x, factor); }
Var operator+(const Var& x, double offset) { return add_scalar(x, offset); }

}  // namespace pdd
