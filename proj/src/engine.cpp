#include "pdd/engine.hpp"

#include <chrono>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "pdd/io.hpp"
#include "pdd/rng.hpp"

namespace pdd {

namespace {

// Independent random streams per purpose, so enabling one loss term never
// shifts the draws of another.
enum Stream : std::uint64_t {
  kInit = 1,
  kEmbedding = 2,
  kMatchAug = 3,
  kRealBatch = 4,
  kDkktAug = 5,
  kSubsample = 6,
};

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::Dm: return "dm";
    case Method::Dsv: return "dsv";
    case Method::Practical: return "practical";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  if (name == "dm") return Method::Dm;
  if (name == "dsv") return Method::Dsv;
  if (name == "practical") return Method::Practical;
  throw Error("unknown method '" + std::string(name) + "' (expected dm, dsv or practical)");
}

std::string_view init_mode_name(InitMode m) { return m == InitMode::Noise ? "noise" : "real"; }

InitMode parse_init_mode(std::string_view name) {
  if (name == "noise") return InitMode::Noise;
  if (name == "real") return InitMode::Real;
  throw Error("unknown init mode '" + std::string(name) + "' (expected noise or real)");
}

std::string_view optimizer_name(PixelOptimizer o) {
  switch (o) {
    case PixelOptimizer::Sgd: return "sgd";
    case PixelOptimizer::Momentum: return "momentum";
    case PixelOptimizer::Adam: return "adam";
  }
  return "?";
}

PixelOptimizer parse_optimizer(std::string_view name) {
  if (name == "sgd") return PixelOptimizer::Sgd;
  if (name == "momentum") return PixelOptimizer::Momentum;
  if (name == "adam") return PixelOptimizer::Adam;
  throw Error("unknown optimizer '" + std::string(name) + "' (expected sgd, momentum or adam)");
}

void DistillConfig::validate() const {
  if (ipc < 1) throw Error("ipc must be at least 1");
  if (pipc && *pipc < 1) throw Error("pipc must be at least 1 (or all)");
  if (steps < 1) throw Error("steps must be at least 1");
  if (!(pixel_lr > 0.0)) throw Error("pixel learning rate must be positive");
  if (!(lambda_lr >= 0.0)) throw Error("multiplier learning rate must be positive (0 selects the default)");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("momentum must be in [0, 1)");
  weights.validate();
}

LossWeights DistillConfig::effective_weights() const {
  switch (method) {
    case Method::Dm: return {0.0, 0.0, 1.0};
    case Method::Dsv: return {weights.alpha, 0.0, 0.0};
    case Method::Practical: return weights;
  }
  return weights;
}

std::string config_json(const DistillConfig& cfg, const ModelSpec& spec) {
  nlohmann::ordered_json j;
  j["type"] = "header";
  j["method"] = method_name(cfg.method);
  j["ipc"] = cfg.ipc;
  j["pipc"] = cfg.pipc_string();
  j["alpha"] = cfg.weights.alpha;
  j["beta"] = cfg.weights.beta;
  j["gamma"] = cfg.weights.gamma;
  j["steps"] = cfg.steps;
  j["pixel_lr"] = cfg.pixel_lr;
  j["lambda_lr"] = cfg.effective_lambda_lr();
  j["init"] = init_mode_name(cfg.init);
  j["gated"] = cfg.gated;
  j["seed"] = cfg.seed;
  j["augment"] = cfg.policy.to_string();
  j["optimizer"] = optimizer_name(cfg.optimizer);
  j["momentum"] = cfg.momentum;
  j["embed_hidden"] = cfg.embed_hidden;
  j["embed_depth"] = cfg.embed_depth;
  j["dm_real_batch"] = cfg.dm_real_batch;
  j["model"] = {{"architecture", architecture_name(spec.architecture)},
                {"input", {spec.channels, spec.height, spec.width}},
                {"classes", spec.classes},
                {"hidden", spec.hidden},
                {"depth", spec.depth}};
  return j.dump();
}

std::string RunManifest::to_jsonl() const {
  std::string out = config_json + "\n";
  for (const auto& r : steps) {
    nlohmann::ordered_json j;
    j["type"] = "step";
    j["step"] = r.step;
    j["primal"] = r.primal;
    j["stat"] = r.stat;
    j["aug"] = r.aug;
    j["dm"] = r.dm;
    j["total"] = r.total;
    j["min_lambda"] = r.min_lambda;
    j["wall_ms"] = r.wall_ms;
    out += j.dump() + "\n";
  }
  nlohmann::ordered_json summary;
  summary["type"] = "summary";
  summary["steps"] = steps.size();
  summary["final_total"] = steps.empty() ? 0.0 : steps.back().total;
  summary["final_stat"] = steps.empty() ? 0.0 : steps.back().stat;
  summary["artifacts"] = artifacts;
  summary["wall_ms"] = wall_ms;
  out += summary.dump() + "\n";
  return out;
}

void RunManifest::write(const std::filesystem::path& path) const { write_file_atomic(path, to_jsonl()); }

LabeledSet subsample_pipc(const LabeledSet& full, std::optional<std::size_t> pipc, std::uint64_t seed) {
  if (!pipc) return full;
  auto groups = full.indices_by_class();
  std::vector<std::size_t> picked;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (groups[k].size() < *pipc) {
      throw Error("subsample_pipc: class " + std::to_string(k) + " has " + std::to_string(groups[k].size()) +
                  " images, fewer than pipc=" + std::to_string(*pipc));
    }
    Rng rng(Rng::derive(seed, kSubsample, k));
    rng.shuffle(std::span<std::size_t>(groups[k]));
    picked.insert(picked.end(), groups[k].begin(), groups[k].begin() + static_cast<std::ptrdiff_t>(*pipc));
  }
  return full.select(picked);
}

SyntheticSet init_synthetic(InitMode mode, const LabeledSet* source, std::size_t ipc, std::size_t classes,
                            const Shape& image_shape, std::uint64_t seed) {
  if (ipc < 1 || classes < 2 || image_shape.size() != 3) throw Error("init_synthetic: invalid request");
  const std::size_t n = ipc * classes;
  SyntheticSet set;
  set.classes = classes;
  for (std::size_t k = 0; k < classes; ++k) set.labels.insert(set.labels.end(), ipc, k);
  set.lambdas = Tensor::full({n}, 1.0 / static_cast<double>(n));
  Rng rng(Rng::derive(seed, kInit));
  const Shape shape{n, image_shape[0], image_shape[1], image_shape[2]};
  if (mode == InitMode::Noise) {
    std::vector<double> pixels(element_count(shape));
    for (auto& v : pixels) v = rng.normal();
    set.images = Tensor(shape, std::move(pixels));
  } else {
    if (source == nullptr) throw Error("init_synthetic: real initialization needs accessible images");
    if (source->classes != classes || source->image_shape() != image_shape) {
      throw ShapeError("init_synthetic: accessible images do not match the model input");
    }
    auto groups = source->indices_by_class();
    std::vector<std::size_t> picked;
    for (std::size_t k = 0; k < classes; ++k) {
      if (groups[k].size() < ipc) {
        throw Error("init_synthetic: class " + std::to_string(k) + " has " + std::to_string(groups[k].size()) +
                    " accessible images, need ipc=" + std::to_string(ipc));
      }
      rng.shuffle(std::span<std::size_t>(groups[k]));
      picked.insert(picked.end(), groups[k].begin(), groups[k].begin() + static_cast<std::ptrdiff_t>(ipc));
    }
    set.images = source->select(picked).images;
  }
  return set;
}

ModelSpec embedding_spec(const DistillConfig& cfg, const ModelSpec& model) {
  ModelSpec spec = model;
  if (model.architecture != Architecture::ConvNet) {
    spec.architecture = Architecture::Mlp;
    spec.hidden = cfg.embed_hidden > 0 ? cfg.embed_hidden : std::max<std::size_t>(model.hidden, 16);
    spec.depth = cfg.embed_depth > 0 ? cfg.embed_depth : 1;
  } else {
    if (cfg.embed_hidden > 0) spec.hidden = cfg.embed_hidden;
    if (cfg.embed_depth > 0) spec.depth = cfg.embed_depth;
  }
  spec.validate();
  return spec;
}

namespace {

class PixelUpdater {
 public:
  PixelUpdater(const DistillConfig& cfg, std::size_t size) : cfg_(cfg), first_(size, 0.0), second_(size, 0.0) {}

  Tensor apply(const Tensor& x, const Tensor& g) {
    ++t_;
    std::vector<double> out = x.to_vector();
    switch (cfg_.optimizer) {
      case PixelOptimizer::Sgd:
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= cfg_.pixel_lr * g[i];
        break;
      case PixelOptimizer::Momentum:
        for (std::size_t i = 0; i < out.size(); ++i) {
          first_[i] = cfg_.momentum * first_[i] + g[i];
          out[i] -= cfg_.pixel_lr * first_[i];
        }
        break;
      case PixelOptimizer::Adam: {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t i = 0; i < out.size(); ++i) {
          first_[i] = b1 * first_[i] + (1.0 - b1) * g[i];
          second_[i] = b2 * second_[i] + (1.0 - b2) * g[i] * g[i];
          out[i] -= cfg_.pixel_lr * (first_[i] / c1) / (std::sqrt(second_[i] / c2) + eps);
        }
        break;
      }
    }
    return Tensor(x.shape(), std::move(out));
  }

 private:
  const DistillConfig& cfg_;
  std::vector<double> first_, second_;
  std::size_t t_ = 0;
};

double min_value(const Tensor& t) {
  double m = t[0];
  for (double v : t.values()) m = std::min(m, v);
  return m;
}

}  // namespace

namespace {

DistillResult run(const DistillConfig& cfg, const ModelSpec& spec, const Checkpoint* model,
                  const LabeledSet* accessible, const StepObserver& observer) {
  cfg.validate();
  spec.validate();
  const auto start = Clock::now();
  const LossWeights w = cfg.effective_weights();
  const bool use_dkkt = cfg.method != Method::Dm;
  const bool use_dm = w.gamma > 0.0;
  if (use_dkkt && model == nullptr) throw Error(std::string(method_name(cfg.method)) + " needs a pretrained model");
  if ((use_dm || cfg.init == InitMode::Real) && accessible == nullptr) {
    throw Error("distribution matching and real initialization need accessible real images");
  }

  if (accessible != nullptr) {
    accessible->validate();
    if (accessible->classes != spec.classes || accessible->image_shape() != spec.input_shape()) {
      throw ShapeError("accessible images " + shape_string(accessible->image_shape()) +
                       " do not match the model input " + shape_string(spec.input_shape()));
    }
  }
  const ModelSpec embed_spec = use_dm ? embedding_spec(cfg, spec) : spec;

  SyntheticSet set = init_synthetic(cfg.init, accessible, cfg.ipc, spec.classes, spec.input_shape(), cfg.seed);
  std::vector<std::vector<std::size_t>> real_groups;
  if (use_dm) real_groups = accessible->indices_by_class();

  const std::size_t h = spec.height, wd = spec.width;
  PixelUpdater updater(cfg, set.images.size());
  const double lambda_lr = cfg.effective_lambda_lr();

  DistillResult result;
  result.manifest.config_json = config_json(cfg, spec);
  result.manifest.steps.reserve(cfg.steps);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto step_start = Clock::now();
    const Var x = Var::leaf(set.images);
    const Var lam = use_dkkt ? Var::leaf(set.lambdas) : Var::constant(set.lambdas);
    StepRecord rec;
    rec.step = step;
    Var total;
    auto accumulate = [&](const Var& term, double weight) {
      const Var scaled = weight == 1.0 ? term : scale(term, weight);
      total = total.defined() ? add(total, scaled) : scaled;
    };

    if (use_dkkt) {
      const DkktTerms terms = dkkt_loss(spec, model->params, x, set.labels, lam, w.alpha, cfg.gated);
      rec.primal = terms.primal.value().item();
      rec.stat = terms.stat.value().item();
      accumulate(terms.total, 1.0);
      if (w.beta > 0.0) {
        Rng rng(Rng::derive(cfg.seed, kDkktAug, step));
        const AugSample omega = sample_augmentation(cfg.policy, rng, h, wd);
        const Var aug = dkkt_loss(spec, model->params, augment(x, omega), set.labels, lam, w.alpha, cfg.gated).total;
        rec.aug = aug.value().item();
        accumulate(aug, w.beta);
      }
    }

    if (use_dm) {
      const EmbeddingNet embedding = sample_embedding(embed_spec, Rng::derive(cfg.seed, kEmbedding, step));
      Rng aug_rng(Rng::derive(cfg.seed, kMatchAug, step));
      Rng batch_rng(Rng::derive(cfg.seed, kRealBatch, step));
      std::vector<Tensor> real(spec.classes);
      std::vector<Var> synth(spec.classes);
      std::vector<AugSample> omega;
      for (std::size_t k = 0; k < spec.classes; ++k) {
        std::vector<std::size_t> members = real_groups[k];
        if (members.empty()) throw Error("class " + std::to_string(k) + " has no accessible real images");
        if (cfg.dm_real_batch > 0 && members.size() > cfg.dm_real_batch) {
          batch_rng.shuffle(std::span<std::size_t>(members));
          members.resize(cfg.dm_real_batch);
        }
        real[k] = accessible->select(members).images;
        synth[k] = slice(x, 0, k * cfg.ipc, (k + 1) * cfg.ipc);
        if (!cfg.policy.empty()) omega.push_back(sample_augmentation(cfg.policy, aug_rng, h, wd));
      }
      const Var dm = dm_loss(real, synth, embedding, omega);
      rec.dm = dm.value().item();
      accumulate(dm, w.gamma);
    }

    rec.total = total.value().item();
    if (!std::isfinite(rec.total)) {
      throw NumericError("non-finite loss at step " + std::to_string(step) + " (" + std::string(method_name(cfg.method)) +
                         ")");
    }

    if (use_dkkt) {
      const auto grads = grad(total, std::vector<Var>{x, lam});
      set.images = updater.apply(set.images, grads[0].value());
      std::vector<double> next = set.lambdas.to_vector();
      for (std::size_t i = 0; i < next.size(); ++i) next[i] -= lambda_lr * grads[1].value()[i];
      set.lambdas = project_lambdas(Tensor(set.lambdas.shape(), std::move(next)));
    } else {
      const auto grads = grad(total, std::vector<Var>{x});
      set.images = updater.apply(set.images, grads[0].value());
    }
    if (!set.images.all_finite()) throw NumericError("non-finite pixels after step " + std::to_string(step));

    rec.min_lambda = min_value(set.lambdas);
    rec.wall_ms = elapsed_ms(step_start);
    result.manifest.steps.push_back(rec);
    if (observer) observer(step, set);
  }
  result.manifest.wall_ms = elapsed_ms(start);
  result.set = std::move(set);
  return result;
}

}  // namespace

DistillResult distill(const DistillConfig& cfg, const Checkpoint* model, const LabeledSet* accessible,
                      const StepObserver& observer) {
  if (model != nullptr) return run(cfg, model->spec, model, accessible, observer);
  if (accessible == nullptr) throw Error(std::string(method_name(cfg.method)) + " needs a model or accessible images");
  ModelSpec spec;
  spec.channels = accessible->images.dim(1);
  spec.height = accessible->images.dim(2);
  spec.width = accessible->images.dim(3);
  spec.classes = accessible->classes;
  return run(cfg, spec, nullptr, accessible, observer);
}

DistillResult extract_dsv(const Checkpoint& model, DistillConfig cfg, const LabeledSet* accessible,
                          const StepObserver& observer) {
  cfg.method = Method::Dsv;
  return distill(cfg, &model, accessible, observer);
}

DistillResult dm_distill(const ModelSpec& model_shape, const LabeledSet& accessible, DistillConfig cfg,
                         const StepObserver& observer) {
  cfg.method = Method::Dm;
  return run(cfg, model_shape, nullptr, &accessible, observer);
}

DistillResult practical_distill(const Checkpoint& model, const LabeledSet& accessible, DistillConfig cfg,
                                const StepObserver& observer) {
  cfg.method = Method::Practical;
  return distill(cfg, &model, &accessible, observer);
}

}  // namespace pdd
