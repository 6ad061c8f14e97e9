#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pdd/data.hpp"
#include "pdd/dm.hpp"
#include "pdd/kkt.hpp"
#include "pdd/nn.hpp"

namespace pdd {

enum class Method { Dm, Dsv, Practical };
enum class InitMode { Noise, Real };
enum class PixelOptimizer { Sgd, Momentum, Adam };

std::string_view method_name(Method m);
Method parse_method(std::string_view name);
std::string_view init_mode_name(InitMode m);
InitMode parse_init_mode(std::string_view name);
std::string_view optimizer_name(PixelOptimizer o);
PixelOptimizer parse_optimizer(std::string_view name);

struct DistillConfig {
  Method method = Method::Practical;
  std::size_t ipc = 1;
  std::optional<std::size_t> pipc;  // empty: every training image is accessible
  LossWeights weights;
  std::size_t steps = 1000;
  double pixel_lr = 0.1;
  double lambda_lr = 0.0;  // 0 selects pixel_lr * 0.1
  InitMode init = InitMode::Noise;
  bool gated = false;
  std::uint64_t seed = 0;
  AugmentPolicy policy;
  PixelOptimizer optimizer = PixelOptimizer::Sgd;
  double momentum = 0.5;
  /// Random embedding used by the matching term; 0 keeps the model's value.
  std::size_t embed_hidden = 0;
  std::size_t embed_depth = 0;
  /// Real images per class drawn for each matching step; 0 uses all of T'.
  std::size_t dm_real_batch = 0;

  void validate() const;
  double effective_lambda_lr() const { return lambda_lr > 0.0 ? lambda_lr : pixel_lr * 0.1; }
  std::string pipc_string() const { return pipc ? std::to_string(*pipc) : "all"; }
  /// Weights actually applied by `method` (dm: matching only; dsv: no
  /// matching and no augmented term).
  LossWeights effective_weights() const;
};

struct StepRecord {
  std::size_t step = 0;
  double primal = 0.0;
  double stat = 0.0;
  double aug = 0.0;
  double dm = 0.0;
  double total = 0.0;
  double min_lambda = 0.0;
  double wall_ms = 0.0;
};

struct RunManifest {
  std::string config_json;
  std::vector<StepRecord> steps;
  double wall_ms = 0.0;
  std::vector<std::string> artifacts;

  /// Header line, one line per step, then a summary line.
  std::string to_jsonl() const;
  void write(const std::filesystem::path& path) const;
};

std::string config_json(const DistillConfig& cfg, const ModelSpec& spec);

/// Exactly `pipc` images per class, drawn without replacement; the whole
/// set when `pipc` is empty.
LabeledSet subsample_pipc(const LabeledSet& full, std::optional<std::size_t> pipc, std::uint64_t seed);

/// Class-major synthetic set with multipliers 1/n. Noise mode draws standard
/// normal pixels; real mode copies `ipc` random images per class of `source`.
SyntheticSet init_synthetic(InitMode mode, const LabeledSet* source, std::size_t ipc, std::size_t classes,
                            const Shape& image_shape, std::uint64_t seed);

/// Random embedding architecture for the matching term.
ModelSpec embedding_spec(const DistillConfig& cfg, const ModelSpec& model);

struct DistillResult {
  SyntheticSet set;
  RunManifest manifest;
};

/// Called after every optimizer step (after the multiplier projection).
using StepObserver = std::function<void(std::size_t step, const SyntheticSet& current)>;

/// Shared synthesis loop. `model` is required unless the method is dm;
/// `accessible` is required for dm, practical with gamma > 0, or real init.
DistillResult distill(const DistillConfig& cfg, const Checkpoint* model, const LabeledSet* accessible,
                      const StepObserver& observer = {});

DistillResult extract_dsv(const Checkpoint& model, DistillConfig cfg, const LabeledSet* accessible = nullptr,
                          const StepObserver& observer = {});
/// `model_shape` supplies the input shape, class count and default embedding
/// width; its parameters are not used.
DistillResult dm_distill(const ModelSpec& model_shape, const LabeledSet& accessible, DistillConfig cfg,
                         const StepObserver& observer = {});
DistillResult practical_distill(const Checkpoint& model, const LabeledSet& accessible, DistillConfig cfg,
                                const StepObserver& observer = {});

}  // namespace pdd
