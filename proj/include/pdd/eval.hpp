#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pdd/nn.hpp"
#include "pdd/tensor.hpp"

namespace pdd {

struct SamConfig {
  double lr = 0.1;
  double rho = 0.001;
  std::size_t epochs = 300;
  std::size_t batch_size = 256;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  /// 5000 epochs, as in the original evaluation protocol.
  static SamConfig paper_protocol();
};

using GradFn = std::function<Tensor(const Tensor& theta)>;

/// One sharpness-aware update of a flat parameter vector.
Tensor sam_step(const Tensor& theta, const GradFn& grad_fn, double lr, double rho);

/// Fresh init from `cfg.seed`, then `cfg.epochs` passes of SAM on mean
/// cross-entropy (+ weight_decay/2 * |theta|^2). Full batch when the set has
/// at most 512 images.
Parameters train_classifier(const ModelSpec& spec, const Tensor& images, std::span<const std::size_t> labels,
                            const SamConfig& cfg);

/// Continues from `start` instead of a fresh initialization.
Parameters train_classifier(const ModelSpec& spec, Parameters start, const Tensor& images,
                            std::span<const std::size_t> labels, const SamConfig& cfg);

/// Predicted class per image (argmax, ties to the lowest index).
std::vector<std::size_t> predict(const ModelSpec& spec, const Parameters& params, const Tensor& images);

/// Percentage of correct argmax predictions.
double test_accuracy(const ModelSpec& spec, const Parameters& params, const Tensor& images,
                     std::span<const std::size_t> labels);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single value
};

Summary summarize(std::span<const double> values);

struct MetricsRecord {
  std::size_t ipc = 0;
  std::string pipc;
  std::string method;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::size_t epochs = 0;
  double wall_ms = 0.0;

  std::string to_json() const;
};

}  // namespace pdd
