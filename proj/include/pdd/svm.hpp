#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pdd/data.hpp"
#include "pdd/engine.hpp"
#include "pdd/kkt.hpp"
#include "pdd/nn.hpp"
#include "pdd/tensor.hpp"

namespace pdd {

/// Hard-margin linear separator w.x + b with one dual variable per point.
struct SvmSolution {
  std::vector<double> w;
  double b = 0.0;
  std::vector<double> alpha;
  std::size_t iterations = 0;

  /// Indices with alpha above `tol`.
  std::vector<std::size_t> support_indices(double tol = 1e-6) const;
  double objective() const;  // |w|^2 / 2
};

struct SvmOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 200000;
  /// Dual mass beyond this means the data cannot be separated.
  double divergence_bound = 1e9;
};

/// `points` is [n, d]; labels are -1 or +1. Throws Error when the set is not
/// strictly linearly separable.
SvmSolution solve_svm(const Tensor& points, std::span<const int> labels, const SvmOptions& options = {});

struct KktResiduals {
  double primal = 0.0;          // max(0, 1 - y (w.x + b))
  double dual = 0.0;            // max(0, -alpha)
  double complementarity = 0.0; // max |alpha (y (w.x + b) - 1)|
  double stationarity = 0.0;    // |w - sum alpha y x|

  double max() const;
};

KktResiduals kkt_residuals(const SvmSolution& sol, const Tensor& points, std::span<const int> labels);

/// Flattens images to [n, d] and maps class 0 to -1, class 1 to +1.
Tensor svm_points(const Tensor& images);
std::vector<int> svm_labels(std::span<const std::size_t> classes);

/// Decision function of a two-class linear model: logit(1) - logit(0).
struct LinearDecision {
  std::vector<double> w;
  double b = 0.0;

  double operator()(std::span<const double> x) const;
};

LinearDecision linear_decision(const ModelSpec& spec, const Parameters& params);

struct DsvProximityRow {
  std::size_t index = 0;
  std::size_t label = 0;
  std::size_t nearest_sv = 0;  // index into the training points
  double distance = 0.0;
  double margin = 0.0;         // |w.x + b| under the trained model
};

struct DsvProximity {
  std::vector<DsvProximityRow> rows;
  std::vector<std::size_t> support;
  double min_training_margin = 0.0;  // min_i y_i (w.x_i + b) under the trained model
  double max_margin_gap = 0.0;       // max over rows of |margin - min_training_margin|
};

DsvProximity dsv_vs_sv_distance(const SyntheticSet& dsv, const SvmSolution& sol, const LabeledSet& data,
                                const LinearDecision& model);

/// End-to-end check on a separable two-class 2-D set: train a linear model
/// to convergence (weight decay keeps the optimum finite), extract DSVs from
/// it and compare them with the exact support vectors.
struct DsvOracleConfig {
  double weight_decay = 0.01;
  std::size_t train_epochs = 2000;
  double train_lr = 0.5;
  std::size_t ipc = 1;
  std::size_t steps = 1000;
  double pixel_lr = 0.1;
  double alpha = 1.0;
  bool gated = false;
  InitMode init = InitMode::Noise;
  std::uint64_t seed = 0;
};

struct DsvOracleResult {
  SvmSolution svm;
  LinearDecision model;
  SyntheticSet dsv;
  double final_stat = 0.0;
  DsvProximity proximity;
};

DsvOracleResult run_dsv_oracle(const LabeledSet& data, const DsvOracleConfig& cfg);

}  // namespace pdd
