#include "pdd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace pdd {

namespace detail {

struct Node {
  OpKind kind = OpKind::Constant;
  Tensor value;
  bool requires_grad = false;
  // Recorded only when requires_grad is set.
  std::vector<Var> inputs;
  Kernel kernel;
  Backward backward;
};

struct Access {
  static Var wrap(std::shared_ptr<Node> node) { return Var(std::move(node)); }
  static const std::shared_ptr<Node>& node(const Var& v) { return v.node_; }
};

}  // namespace detail

using detail::Access;
using detail::Node;

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Neg: return "neg";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Relu: return "relu";
    case OpKind::ClampMin: return "clamp_min";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Conv2dInputGrad: return "conv2d_input_grad";
    case OpKind::Conv2dWeightGrad: return "conv2d_weight_grad";
    case OpKind::AvgPool2: return "avg_pool2";
    case OpKind::AvgPool2Adjoint: return "avg_pool2_adjoint";
    case OpKind::LogSumExp: return "logsumexp";
    case OpKind::Reshape: return "reshape";
    case OpKind::BroadcastTo: return "broadcast_to";
    case OpKind::SumTo: return "sum_to";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::SliceAdjoint: return "slice_adjoint";
    case OpKind::Resample: return "resample";
    case OpKind::ResampleAdjoint: return "resample_adjoint";
  }
  return "unknown";
}

Var Var::leaf(Tensor value) {
  auto node = std::make_shared<Node>();
  node->kind = OpKind::Leaf;
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->kind = OpKind::Constant;
  node->value = std::move(value);
  return Var(std::move(node));
}

const Tensor& Var::value() const {
  if (!node_) throw Error("use of an undefined Var");
  return node_->value;
}

OpKind Var::kind() const { return node_ ? node_->kind : OpKind::Constant; }

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const Var> Var::inputs() const {
  if (!node_) return {};
  return node_->inputs;
}

Var make_op(OpKind kind, std::vector<Var> inputs, Kernel kernel, Backward backward) {
  std::vector<Tensor> values;
  values.reserve(inputs.size());
  bool requires_grad = false;
  for (const auto& input : inputs) {
    if (!input.defined()) throw Error(std::string(op_name(kind)) + ": undefined input");
    values.push_back(input.value());
    requires_grad = requires_grad || input.requires_grad();
  }
  auto node = std::make_shared<Node>();
  node->value = kernel(values);
  if (requires_grad) {
    node->kind = kind;
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->kernel = std::move(kernel);
    node->backward = std::move(backward);
  }
  return Access::wrap(std::move(node));
}

namespace {

// Post-order over the recorded part of the graph below `root`.
std::vector<std::shared_ptr<Node>> recorded_post_order(const std::shared_ptr<Node>& root) {
  std::vector<std::shared_ptr<Node>> order;
  if (!root || !root->requires_grad) return order;
  std::unordered_set<const Node*> seen{root.get()};
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack{{root, 0}};
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Var& input = node->inputs[next++];
      if (input.requires_grad() && seen.insert(input.node()).second) {
        stack.emplace_back(Access::node(input), 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph) {
  if (!output.defined()) throw Error("grad: undefined output");
  if (output.value().size() != 1) {
    throw ShapeError("grad: output must be a scalar, got shape " + shape_string(output.shape()));
  }
  std::unordered_set<const Node*> targets;
  for (const auto& w : wrt) targets.insert(w.node());

  const auto order = recorded_post_order(Access::node(output));
  std::unordered_map<const Node*, bool> relevant;
  for (const auto& node : order) {
    bool r = targets.contains(node.get());
    for (const auto& input : node->inputs) r = r || (input.requires_grad() && relevant[input.node()]);
    relevant[node.get()] = r;
  }

  std::unordered_map<const Node*, Var> grads;
  grads[output.node()] = Var::constant(Tensor::full(output.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto& node = *it;
    if (!relevant[node.get()] || node->inputs.empty()) continue;
    auto found = grads.find(node.get());
    if (found == grads.end()) continue;
    std::vector<bool> needed;
    bool any = false;
    for (const auto& input : node->inputs) {
      needed.push_back(input.requires_grad() && relevant[input.node()]);
      any = any || needed.back();
    }
    Var upstream = found->second;
    if (!targets.contains(node.get())) grads.erase(found);
    if (!any) continue;

    std::vector<Var> inputs;
    Var self;
    if (create_graph) {
      inputs = node->inputs;
      self = Access::wrap(node);
    } else {
      upstream = upstream.detach();
      for (const auto& input : node->inputs) inputs.push_back(input.detach());
      self = Var::constant(node->value);
    }
    const auto input_grads = node->backward(upstream, inputs, self, needed);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      if (!needed[i]) continue;
      const Var& g = input_grads.at(i);
      const Node* target = node->inputs[i].node();
      if (!g.defined() || g.shape() != node->inputs[i].shape()) {
        throw ShapeError(std::string(op_name(node->kind)) + ": backward produced a gradient of the wrong shape");
      }
      auto slot = grads.find(target);
      if (slot == grads.end()) {
        grads.emplace(target, g);
      } else {
        slot->second = add(slot->second, g);
      }
    }
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto found = grads.find(w.node());
    if (found != grads.end()) {
      result.push_back(create_graph ? found->second : found->second.detach());
    } else {
      result.push_back(Var::constant(Tensor::zeros(w.shape())));
    }
  }
  return result;
}

std::vector<Var> grad(const GradientRequest& request) {
  return grad(request.output, request.wrt, request.create_graph);
}

Tensor replay(const Var& output) {
  if (!output.defined()) throw Error("replay: undefined output");
  if (!output.requires_grad()) return output.value();
  const auto order = recorded_post_order(Access::node(output));
  std::unordered_map<const Node*, Tensor> values;
  for (const auto& node : order) {
    if (node->inputs.empty()) {
      values.emplace(node.get(), node->value);
      continue;
    }
    std::vector<Tensor> inputs;
    for (const auto& input : node->inputs) {
      auto found = values.find(input.node());
      inputs.push_back(found != values.end() ? found->second : input.value());
    }
    values.emplace(node.get(), node->kernel(inputs));
  }
  return values.at(output.node());
}

double finite_difference_check(const std::function<Var(const Var&)>& f, const Tensor& x, double step) {
  const Var input = Var::leaf(x);
  const Var y = f(input);
  if (y.value().size() != 1) throw ShapeError("finite_difference_check: f must return a scalar");
  if (!y.value().all_finite()) throw NumericError("finite_difference_check: f is not finite at x");
  const Tensor analytic = grad(y, std::span<const Var>(&input, 1))[0].value();

  std::vector<double> probe = x.to_vector();
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + step;
    const double plus = f(Var::constant(Tensor(x.shape(), probe))).value().item();
    probe[i] = original - step;
    const double minus = f(Var::constant(Tensor(x.shape(), probe))).value().item();
    probe[i] = original;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericError("finite_difference_check: f is not finite near coordinate " + std::to_string(i));
    }
    const double numeric = (plus - minus) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace pdd
