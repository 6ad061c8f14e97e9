#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pdd/autodiff.hpp"
#include "pdd/nn.hpp"
#include "pdd/rng.hpp"

namespace pdd {

/// A random, never-trained feature extractor. The identity embedding just
/// flattens its input.
struct EmbeddingNet {
  ModelSpec spec;
  Parameters params;
  bool identity = false;

  static EmbeddingNet flatten(const Shape& input_shape);
  /// [N, ...] -> [N, features]
  Var embed(const Var& batch) const;
};

/// `trunk` is the model whose feature extractor is used; its head is ignored.
EmbeddingNet sample_embedding(const ModelSpec& trunk, std::uint64_t seed);

struct AugmentPolicy {
  bool flip = false;
  bool translate = false;
  bool scale = false;
  bool rotate = false;
  bool color = false;
  bool cutout = false;

  static AugmentPolicy parse(std::string_view list);
  static AugmentPolicy none() { return {}; }
  std::string to_string() const;
  bool empty() const noexcept { return !(flip || translate || scale || rotate || color || cutout); }
  bool geometric() const noexcept { return flip || translate || scale || rotate; }
};

/// One draw of augmentation randomness, shared by every batch it is applied
/// to. Ops absent from the policy keep their identity values.
struct AugSample {
  AugmentPolicy policy;
  std::size_t height = 0;
  std::size_t width = 0;
  bool flip = false;
  int shift_y = 0;
  int shift_x = 0;
  double scale_y = 1.0;
  double scale_x = 1.0;
  double angle = 0.0;  // radians
  double brightness = 0.0;
  double saturation = 1.0;
  double contrast = 1.0;
  std::size_t cut_top = 0, cut_left = 0, cut_bottom = 0, cut_right = 0;  // half-open box

  static AugSample identity(std::size_t height, std::size_t width);
};

AugSample sample_augmentation(const AugmentPolicy& policy, Rng& rng, std::size_t height, std::size_t width);

/// Geometric ops are fused into one bilinear resampling with zero padding,
/// then color jitter, then the cutout mask.
Var augment(const Var& batch, const AugSample& omega);

/// Mean over classes of the squared distance between embedded class means.
/// `synth_by_class[c]` may be undefined to skip class c; `real_by_class[c]`
/// must then be non-empty. `omega_by_class` is empty (no augmentation) or
/// holds one draw per class.
Var dm_loss(std::span<const Tensor> real_by_class, std::span<const Var> synth_by_class, const EmbeddingNet& embedding,
            std::span<const AugSample> omega_by_class);

}  // namespace pdd
