#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pdd/autodiff.hpp"
#include "pdd/nn.hpp"
#include "pdd/tensor.hpp"

namespace pdd {

/// Synthetic images with labels and one Lagrange multiplier per image.
struct SyntheticSet {
  Tensor images;  // [n, C, H, W]
  std::vector<std::size_t> labels;
  Tensor lambdas;  // [n]
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  void validate() const;
  friend bool operator==(const SyntheticSet&, const SyntheticSet&) = default;
};

struct LossWeights {
  double alpha = 0.0;  // stationarity
  double beta = 0.0;   // DKKT on augmented images
  double gamma = 0.0;  // distribution matching

  void validate() const;
};

/// Stationarity weight used for a given number of accessible real images
/// per class (10, 50, or everything).
double default_alpha(std::size_t pipc, bool all_real);
/// Distribution-matching weight for a given images-per-class budget.
double default_gamma(std::size_t ipc);

struct CeMargin {
  double loss;
  double margin;
};

CeMargin ce_margin(std::span<const double> logits, std::size_t label);

/// Per-sample cross-entropy [N] for logits [N, C].
Var cross_entropy(const Var& logits, std::span<const std::size_t> labels);

/// Mean cross-entropy of the images under the frozen model. With `gated`,
/// samples already classified correctly (argmax, ties to the lowest index)
/// contribute zero; the gate is a constant mask.
Var primal_loss(const ModelSpec& spec, std::span<const Var> params, const Var& images,
                std::span<const std::size_t> labels, bool gated);

/// Flattened -sum_i lambda_i * dL_i/dtheta at theta = `params`. The result
/// stays differentiable in the images and the multipliers.
Var aggregated_gradient(const ModelSpec& spec, const Parameters& params, const Var& images,
                        std::span<const std::size_t> labels, const Var& lambdas);

/// 1 - cos(theta, agg), in [0, 2]. A zero aggregate gives 1.
Var stationarity_loss(const Tensor& theta_flat, const Var& agg);

struct DkktTerms {
  Var primal;
  Var stat;  // constant 0 when alpha == 0 (not evaluated)
  Var total;
};

DkktTerms dkkt_loss(const ModelSpec& spec, const Parameters& params, const Var& images,
                    std::span<const std::size_t> labels, const Var& lambdas, double alpha, bool gated);

Tensor project_lambdas(const Tensor& lambdas);
SyntheticSet project_lambdas(SyntheticSet set);

}  // namespace pdd
