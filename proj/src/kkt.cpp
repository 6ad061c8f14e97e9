#include "pdd/kkt.hpp"

#include <algorithm>
#include <cmath>

namespace pdd {

void SyntheticSet::validate() const {
  if (classes < 2) throw Error("synthetic set: need at least 2 classes");
  if (images.rank() != 4) throw ShapeError("synthetic set: images must be [n, C, H, W], got " + shape_string(images.shape()));
  const std::size_t n = images.dim(0);
  if (labels.size() != n) {
    throw ShapeError("synthetic set: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " images");
  }
  if (lambdas.shape() != Shape{n}) {
    throw ShapeError("synthetic set: multipliers have shape " + shape_string(lambdas.shape()) + ", expected [" +
                     std::to_string(n) + "]");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= classes) throw Error("synthetic set: label " + std::to_string(labels[i]) + " out of range");
    if (!(lambdas[i] >= 0.0)) throw Error("synthetic set: multiplier " + std::to_string(i) + " is negative");
  }
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0)) throw Error("loss weights must be non-negative");
}

double default_alpha(std::size_t pipc, bool all_real) {
  if (all_real || pipc > 50) return 0.001;
  return pipc <= 10 ? 0.1 : 0.01;
}

double default_gamma(std::size_t ipc) { return ipc >= 50 ? 0.01 : 0.001; }

CeMargin ce_margin(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw Error("ce_margin: label " + std::to_string(label) + " out of range");
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - top);
  const double loss = top + std::log(total) - logits[label];
  return {loss, -loss};
}

namespace {

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  std::vector<double> out(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw Error("label " + std::to_string(labels[i]) + " out of range");
    out[i * classes + labels[i]] = 1.0;
  }
  return Tensor({labels.size(), classes}, std::move(out));
}

}  // namespace

Var cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
  if (logits.shape().size() != 2 || logits.shape()[0] != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_string(logits.shape()) + " for " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t n = labels.size(), c = logits.shape()[1];
  const Var picked = sum_to(mul(logits, Var::constant(one_hot(labels, c))), {n, 1});
  return sub(logsumexp(logits), reshape(picked, {n}));
}

Var primal_loss(const ModelSpec& spec, std::span<const Var> params, const Var& images,
                std::span<const std::size_t> labels, bool gated) {
  const Var logits = forward(spec, params, images);
  Var losses = cross_entropy(logits, labels);
  if (gated) {
    const Tensor& z = logits.value();
    const std::size_t n = labels.size(), c = spec.classes;
    std::vector<double> mask(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = z.values().subspan(i * c, c);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == labels[i]) mask[i] = 0.0;
    }
    losses = mul(losses, Var::constant(Tensor({n}, std::move(mask))));
  }
  return mean(losses);
}

Var aggregated_gradient(const ModelSpec& spec, const Parameters& params, const Var& images,
                        std::span<const std::size_t> labels, const Var& lambdas) {
  if (lambdas.shape() != Shape{labels.size()}) {
    throw ShapeError("aggregated_gradient: multipliers " + shape_string(lambdas.shape()) + " for " +
                     std::to_string(labels.size()) + " samples");
  }
  const auto theta = params.as_leaves();
  const Var weighted = sum(mul(cross_entropy(forward(spec, theta, images), labels), lambdas));
  const auto grads = grad({.output = weighted, .wrt = theta, .create_graph = true});
  return neg(flatten_params(grads));
}

Var stationarity_loss(const Tensor& theta_flat, const Var& agg) {
  if (agg.shape() != theta_flat.shape() || theta_flat.rank() != 1) {
    throw ShapeError("stationarity_loss: parameter vector " + shape_string(theta_flat.shape()) + " vs aggregate " +
                     shape_string(agg.shape()));
  }
  // Both squared norms go through the same reduction as the inner product,
  // so agg == +-theta gives exactly 0 and 2.
  const Var theta = Var::constant(theta_flat);
  const double theta_sq = sum(square(theta)).value().item();
  if (theta_sq == 0.0) throw NumericError("stationarity_loss: parameter vector is zero");

  const Var agg_sq = sum(square(agg));
  if (agg_sq.value().item() == 0.0) return Var::constant(Tensor::scalar(1.0));
  const Var cosine = div(sum(mul(theta, agg)), sqrt(scale(agg_sq, theta_sq)));
  // Rounding can push |cos| a hair past 1; keep D inside [0, 2].
  const Var d = add_scalar(neg(cosine), 1.0);
  return add_scalar(neg(clamp_min(add_scalar(neg(clamp_min(d, 0.0)), 2.0), 0.0)), 2.0);
}

DkktTerms dkkt_loss(const ModelSpec& spec, const Parameters& params, const Var& images,
                    std::span<const std::size_t> labels, const Var& lambdas, double alpha, bool gated) {
  if (!(alpha >= 0.0)) throw Error("dkkt_loss: alpha must be non-negative");
  DkktTerms terms;
  terms.primal = primal_loss(spec, params.as_constants(), images, labels, gated);
  if (alpha == 0.0) {
    terms.stat = Var::constant(Tensor::scalar(0.0));
    terms.total = terms.primal;
    return terms;
  }
  terms.stat = stationarity_loss(flatten_params(params), aggregated_gradient(spec, params, images, labels, lambdas));
  terms.total = add(terms.primal, scale(terms.stat, alpha));
  return terms;
}

Tensor project_lambdas(const Tensor& lambdas) {
  std::vector<double> out = lambdas.to_vector();
  for (auto& v : out) v = std::max(v, 0.0);
  return Tensor(lambdas.shape(), std::move(out));
}

SyntheticSet project_lambdas(SyntheticSet set) {
  set.lambdas = project_lambdas(set.lambdas);
  return set;
}

}  // namespace pdd
