#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "pdd/tensor.hpp"

namespace pdd {

enum class OpKind : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Scale,
  AddScalar,
  Exp,
  Log,
  Sqrt,
  Relu,
  ClampMin,
  MatMul,
  Transpose,
  Conv2d,
  Conv2dInputGrad,
  Conv2dWeightGrad,
  AvgPool2,
  AvgPool2Adjoint,
  LogSumExp,
  Reshape,
  BroadcastTo,
  SumTo,
  Concat,
  Slice,
  SliceAdjoint,
  Resample,
  ResampleAdjoint,
};

std::string_view op_name(OpKind kind);

class Var;

namespace detail {
struct Node;
struct Access;
}

/// Handle to a node of a recorded computation graph.
///
/// A graph is owned by the handles that reach it: nodes keep their inputs
/// alive and nothing else, so each computation carries its own tape and
/// separate computations never share mutable state. Only nodes that depend
/// on a leaf record their inputs; everything else is folded into constants.
class Var {
 public:
  Var() = default;

  /// Differentiable input.
  static Var leaf(Tensor value);
  static Var constant(Tensor value);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  OpKind kind() const;
  bool requires_grad() const;
  std::span<const Var> inputs() const;
  /// Constant holding the same value; cuts the graph.
  Var detach() const { return constant(value()); }

  const detail::Node* node() const noexcept { return node_.get(); }

 private:
  friend struct detail::Access;
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

/// Recomputes a tensor from input values; stored per node for replay.
using Kernel = std::function<Tensor(std::span<const Tensor>)>;

/// Maps (output gradient, inputs, output, which inputs need a gradient) to
/// input gradients. Must be written in terms of differentiable ops so that
/// gradients can themselves be differentiated.
using Backward =
    std::function<std::vector<Var>(const Var&, std::span<const Var>, const Var&, const std::vector<bool>&)>;

Var make_op(OpKind kind, std::vector<Var> inputs, Kernel kernel, Backward backward);

struct GradientRequest {
  Var output;
  std::vector<Var> wrt;
  /// When set, the returned gradients are recorded and differentiable.
  bool create_graph = false;
};

/// Reverse-mode gradients of a scalar `output` with respect to `wrt`.
/// An input the output does not depend on receives a zero gradient.
std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph = false);
std::vector<Var> grad(const GradientRequest& request);

/// Re-evaluates every recorded node from the leaves and constants below
/// `output` and returns the recomputed output value.
Tensor replay(const Var& output);

/// Largest |analytic - central difference| / max(1, |analytic|) over the
/// coordinates of `x` for the scalar function `f`.
double finite_difference_check(const std::function<Var(const Var&)>& f, const Tensor& x, double step);

// Elementwise arithmetic broadcasts with NumPy rules.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& x);
Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double offset);
Var exp(const Var& x);
Var log(const Var& x);
Var sqrt(const Var& x);
Var square(const Var& x);
/// max(x, 0); the subgradient at 0 is 0.
Var relu(const Var& x);
Var clamp_min(const Var& x, double floor);

/// [m, k] x [k, n] -> [m, n].
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& x);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x: [N, C, H, W], weight: [O, C, kh, kw] -> [N, O, Ho, Wo]. No bias.
Var conv2d(const Var& x, const Var& weight, Conv2dOptions options = {});
/// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
Var avg_pool2(const Var& x);
/// Per-sample, per-channel normalization of [N, C, H, W] over H and W.
Var instance_norm(const Var& x, double eps = 1e-5);
/// log(sum(exp(x))) over the last axis; the last axis is removed.
Var logsumexp(const Var& x);

Var reshape(const Var& x, Shape shape);
Var broadcast_to(const Var& x, const Shape& shape);
/// Sums down to `shape` (the inverse of broadcast_to).
Var sum_to(const Var& x, const Shape& shape);
Var sum(const Var& x);
Var mean(const Var& x);
Var concat(std::span<const Var> parts, std::size_t axis);
/// Elements [begin, end) along `axis`.
Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end);

/// Fixed linear resampling of image planes: each output pixel is a weighted
/// sum of input pixels of the same sample and channel.
struct Sampler {
  struct Tap {
    std::uint32_t source;
    double weight;
  };
  std::size_t in_height = 0;
  std::size_t in_width = 0;
  std::size_t out_height = 0;
  std::size_t out_width = 0;
  /// taps[offsets[p] .. offsets[p + 1]) feed output pixel p.
  std::vector<std::size_t> offsets;
  std::vector<Tap> taps;

  /// Bilinear sampler reading output pixel (row, col) from the source
  /// position returned by `source_of`; out-of-range reads contribute zero.
  static Sampler bilinear(std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w,
                          const std::function<std::pair<double, double>(double, double)>& source_of);
};

Var resample(const Var& x, std::shared_ptr<const Sampler> sampler);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& x);
Var operator*(const Var& x, double factor);
Var operator*(double factor, const Var& x);
Var operator+(const Var& x, double offset);

}  // namespace pdd
