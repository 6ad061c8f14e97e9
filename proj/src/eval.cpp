#include "pdd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "pdd/kkt.hpp"
#include "pdd/rng.hpp"

namespace pdd {

void SamConfig::validate() const {
  if (!(lr > 0.0)) throw Error("SAM learning rate must be positive");
  if (!(rho >= 0.0)) throw Error("SAM rho must be non-negative");
  if (batch_size < 1) throw Error("batch size must be at least 1");
  if (!(weight_decay >= 0.0)) throw Error("weight decay must be non-negative");
}

SamConfig SamConfig::paper_protocol() {
  SamConfig cfg;
  cfg.epochs = 5000;
  return cfg;
}

Tensor sam_step(const Tensor& theta, const GradFn& grad_fn, double lr, double rho) {
  const Tensor g = grad_fn(theta);
  if (g.shape() != theta.shape()) throw ShapeError("sam_step: gradient shape differs from parameters");
  if (!g.all_finite()) throw NumericError("sam_step: non-finite gradient");
  double norm_sq = 0.0;
  for (double v : g.values()) norm_sq += v * v;

  Tensor g_sharp = g;
  if (rho != 0.0 && norm_sq != 0.0) {
    const double factor = rho / std::sqrt(norm_sq);
    std::vector<double> perturbed = theta.to_vector();
    for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] += factor * g[i];
    g_sharp = grad_fn(Tensor(theta.shape(), std::move(perturbed)));
    if (!g_sharp.all_finite()) throw NumericError("sam_step: non-finite gradient at the perturbed point");
  }
  std::vector<double> next = theta.to_vector();
  for (std::size_t i = 0; i < next.size(); ++i) next[i] -= lr * g_sharp[i];
  return Tensor(theta.shape(), std::move(next));
}

Parameters train_classifier(const ModelSpec& spec, const Tensor& images, std::span<const std::size_t> labels,
                            const SamConfig& cfg) {
  return train_classifier(spec, init_params(spec, cfg.seed), images, labels, cfg);
}

Parameters train_classifier(const ModelSpec& spec, Parameters start, const Tensor& images,
                            std::span<const std::size_t> labels, const SamConfig& cfg) {
  cfg.validate();
  check_structure(spec, start);
  const std::size_t n = labels.size();
  if (n == 0) throw Error("train_classifier: empty training set");
  if (images.rank() != 4 || images.dim(0) != n) {
    throw ShapeError("train_classifier: " + shape_string(images.shape()) + " images for " + std::to_string(n) +
                     " labels");
  }
  const bool full_batch = n <= 512;
  const std::size_t batch = full_batch ? n : cfg.batch_size;
  const std::size_t stride = images.size() / n;

  Tensor theta = flatten_params(start);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffler(Rng::derive(cfg.seed, 0x5a3));

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (!full_batch) shuffler.shuffle(std::span<std::size_t>(order));
    for (std::size_t first = 0; first < n; first += batch) {
      const std::size_t count = std::min(batch, n - first);
      Tensor x;
      std::vector<std::size_t> y;
      if (full_batch) {
        x = images;
        y.assign(labels.begin(), labels.end());
      } else {
        std::vector<double> values;
        values.reserve(count * stride);
        for (std::size_t k = first; k < first + count; ++k) {
          const auto row = images.values().subspan(order[k] * stride, stride);
          values.insert(values.end(), row.begin(), row.end());
          y.push_back(labels[order[k]]);
        }
        Shape shape = images.shape();
        shape[0] = count;
        x = Tensor(std::move(shape), std::move(values));
      }
      const Var batch_images = Var::constant(x);
      const GradFn grad_fn = [&](const Tensor& flat) {
        const auto leaves = unflatten_params(spec, flat).as_leaves();
        Var loss = mean(cross_entropy(forward(spec, leaves, batch_images), y));
        if (!std::isfinite(loss.value().item())) {
          throw NumericError("train_classifier: non-finite loss at epoch " + std::to_string(epoch));
        }
        if (cfg.weight_decay > 0.0) {
          loss = add(loss, scale(sum(square(flatten_params(leaves))), 0.5 * cfg.weight_decay));
        }
        return flatten_params(grad(loss, leaves)).value();
      };
      theta = sam_step(theta, grad_fn, cfg.lr, cfg.rho);
    }
  }
  return unflatten_params(spec, theta);
}

std::vector<std::size_t> predict(const ModelSpec& spec, const Parameters& params, const Tensor& images) {
  const std::size_t n = images.dim(0), c = spec.classes;
  std::vector<std::size_t> out;
  out.reserve(n);
  constexpr std::size_t kChunk = 500;
  for (std::size_t first = 0; first < n; first += kChunk) {
    const std::size_t count = std::min(kChunk, n - first);
    const Tensor logits = forward(spec, params, images.rows(first, count));
    for (std::size_t i = 0; i < count; ++i) {
      const auto row = logits.values().subspan(i * c, c);
      out.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

double test_accuracy(const ModelSpec& spec, const Parameters& params, const Tensor& images,
                     std::span<const std::size_t> labels) {
  if (labels.empty() || images.dim(0) != labels.size()) throw ShapeError("test_accuracy: images and labels differ");
  const auto predicted = predict(spec, params, images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i] ? 1 : 0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

Summary summarize(std::span<const double> values) {
  if (values.empty()) throw Error("summarize: no values");
  Summary s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::string MetricsRecord::to_json() const {
  nlohmann::ordered_json j;
  j["ipc"] = ipc;
  j["pipc"] = pipc;
  j["method"] = method;
  j["seed"] = seed;
  j["accuracy"] = accuracy;
  j["epochs"] = epochs;
  j["wall_ms"] = wall_ms;
  return j.dump();
}

}  // namespace pdd
