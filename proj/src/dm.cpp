#include "pdd/dm.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace pdd {

EmbeddingNet EmbeddingNet::flatten(const Shape& input_shape) {
  if (input_shape.size() != 3) throw ShapeError("identity embedding needs a [C, H, W] input shape");
  EmbeddingNet net;
  net.spec = {.architecture = Architecture::Linear, .channels = input_shape[0], .height = input_shape[1],
              .width = input_shape[2], .classes = 2};
  net.identity = true;
  return net;
}

Var EmbeddingNet::embed(const Var& batch) const {
  if (identity) {
    const Shape& s = batch.shape();
    if (s.size() != 4) throw ShapeError("embed: batch must be [N, C, H, W], got " + shape_string(s));
    return reshape(batch, {s[0], s[1] * s[2] * s[3]});
  }
  return features(spec, params.as_constants(), batch);
}

EmbeddingNet sample_embedding(const ModelSpec& trunk, std::uint64_t seed) {
  EmbeddingNet net;
  net.spec = trunk;
  net.params = init_params(trunk, seed);
  return net;
}

AugmentPolicy AugmentPolicy::parse(std::string_view list) {
  AugmentPolicy policy;
  std::size_t start = 0;
  while (start <= list.size()) {
    const std::size_t end = std::min(list.find(',', start), list.size());
    const std::string_view item = list.substr(start, end - start);
    start = end + 1;
    if (item.empty() || item == "none") continue;
    if (item == "flip") policy.flip = true;
    else if (item == "translate") policy.translate = true;
    else if (item == "scale") policy.scale = true;
    else if (item == "rotate") policy.rotate = true;
    else if (item == "color") policy.color = true;
    else if (item == "cutout") policy.cutout = true;
    else throw Error("unknown augmentation '" + std::string(item) + "' (expected flip, translate, scale, rotate, color, cutout)");
  }
  return policy;
}

std::string AugmentPolicy::to_string() const {
  std::string out;
  auto put = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  put(flip, "flip");
  put(translate, "translate");
  put(scale, "scale");
  put(rotate, "rotate");
  put(color, "color");
  put(cutout, "cutout");
  return out.empty() ? "none" : out;
}

AugSample AugSample::identity(std::size_t height, std::size_t width) {
  AugSample s;
  s.height = height;
  s.width = width;
  return s;
}

AugSample sample_augmentation(const AugmentPolicy& policy, Rng& rng, std::size_t height, std::size_t width) {
  AugSample s = AugSample::identity(height, width);
  s.policy = policy;
  // Every op always consumes its draws so one policy change does not shift
  // the randomness of the others.
  const bool flip = rng.bernoulli(0.5);
  const int max_dy = static_cast<int>(std::lround(0.125 * static_cast<double>(height)));
  const int max_dx = static_cast<int>(std::lround(0.125 * static_cast<double>(width)));
  const int dy = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * max_dy + 1))) - max_dy;
  const int dx = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * max_dx + 1))) - max_dx;
  const double sy = rng.uniform(0.8, 1.2), sx = rng.uniform(0.8, 1.2);
  const double angle = rng.uniform(-15.0, 15.0) * std::numbers::pi / 180.0;
  const double brightness = rng.uniform(-0.25, 0.25);
  const double saturation = rng.uniform(0.75, 1.25);
  const double contrast = rng.uniform(0.75, 1.25);
  const std::size_t cy = rng.below(height), cx = rng.below(width);

  if (policy.flip) s.flip = flip;
  if (policy.translate) {
    s.shift_y = dy;
    s.shift_x = dx;
  }
  if (policy.scale) {
    s.scale_y = sy;
    s.scale_x = sx;
  }
  if (policy.rotate) s.angle = angle;
  if (policy.color) {
    s.brightness = brightness;
    s.saturation = saturation;
    s.contrast = contrast;
  }
  if (policy.cutout) {
    const std::size_t half_h = height / 4, half_w = width / 4;
    s.cut_top = cy >= half_h ? cy - half_h : 0;
    s.cut_left = cx >= half_w ? cx - half_w : 0;
    s.cut_bottom = std::min(height, cy + (height / 2 - half_h));
    s.cut_right = std::min(width, cx + (width / 2 - half_w));
  }
  return s;
}

namespace {

bool has_geometry(const AugSample& w) {
  return w.flip || w.shift_y != 0 || w.shift_x != 0 || w.scale_y != 1.0 || w.scale_x != 1.0 || w.angle != 0.0;
}

// Output pixel p reads from T^-1(p) where T = translate . rotate . scale . flip,
// all about the image center.
std::shared_ptr<const Sampler> geometric_sampler(const AugSample& w) {
  const double cy = (static_cast<double>(w.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w.width) - 1.0) / 2.0;
  const double cos_a = std::cos(w.angle), sin_a = std::sin(w.angle);
  return std::make_shared<const Sampler>(
      Sampler::bilinear(w.height, w.width, w.height, w.width, [&](double r, double c) {
        double y = r - cy - w.shift_y, x = c - cx - w.shift_x;
        if (w.angle != 0.0) {
          const double ry = cos_a * y - sin_a * x;
          const double rx = sin_a * y + cos_a * x;
          y = ry;
          x = rx;
        }
        y /= w.scale_y;
        x /= w.scale_x;
        if (w.flip) x = -x;
        return std::pair{cy + y, cx + x};
      }));
}

}  // namespace

Var augment(const Var& batch, const AugSample& omega) {
  const Shape& s = batch.shape();
  if (s.size() != 4 || s[2] != omega.height || s[3] != omega.width) {
    throw ShapeError("augment: batch " + shape_string(s) + " does not match draw for " + std::to_string(omega.height) +
                     "x" + std::to_string(omega.width) + " images");
  }
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  Var x = batch;
  if (has_geometry(omega)) x = resample(x, geometric_sampler(omega));
  if (omega.brightness != 0.0) x = add_scalar(x, omega.brightness);
  if (omega.saturation != 1.0 && c > 1) {
    const Var gray = broadcast_to(scale(sum_to(x, {n, 1, h, w}), 1.0 / static_cast<double>(c)), s);
    x = add(gray, scale(sub(x, gray), omega.saturation));
  }
  if (omega.contrast != 1.0) {
    const Var level = broadcast_to(scale(sum_to(x, {n, 1, 1, 1}), 1.0 / static_cast<double>(c * h * w)), s);
    x = add(level, scale(sub(x, level), omega.contrast));
  }
  if (omega.cut_bottom > omega.cut_top && omega.cut_right > omega.cut_left) {
    std::vector<double> mask(h * w, 1.0);
    for (std::size_t r = omega.cut_top; r < omega.cut_bottom; ++r) {
      for (std::size_t col = omega.cut_left; col < omega.cut_right; ++col) mask[r * w + col] = 0.0;
    }
    x = mul(x, Var::constant(Tensor({1, 1, h, w}, std::move(mask))));
  }
  return x;
}

Var dm_loss(std::span<const Tensor> real_by_class, std::span<const Var> synth_by_class, const EmbeddingNet& embedding,
            std::span<const AugSample> omega_by_class) {
  if (real_by_class.size() != synth_by_class.size()) {
    throw ShapeError("dm_loss: " + std::to_string(real_by_class.size()) + " real classes vs " +
                     std::to_string(synth_by_class.size()) + " synthetic classes");
  }
  if (!omega_by_class.empty() && omega_by_class.size() != synth_by_class.size()) {
    throw ShapeError("dm_loss: need one augmentation draw per class");
  }
  Var total;
  std::size_t matched = 0;
  for (std::size_t k = 0; k < synth_by_class.size(); ++k) {
    if (!synth_by_class[k].defined()) continue;
    if (real_by_class[k].rank() == 0 || real_by_class[k].dim(0) == 0) {
      throw Error("dm_loss: class " + std::to_string(k) + " has no real samples");
    }
    Var real = Var::constant(real_by_class[k]);
    Var synth = synth_by_class[k];
    if (!omega_by_class.empty()) {
      real = augment(real, omega_by_class[k]);
      synth = augment(synth, omega_by_class[k]);
    }
    const Var er = embedding.embed(real);
    const Var es = embedding.embed(synth);
    const std::size_t f = er.shape()[1];
    const Var mean_r = scale(sum_to(er, {1, f}), 1.0 / static_cast<double>(er.shape()[0]));
    const Var mean_s = scale(sum_to(es, {1, f}), 1.0 / static_cast<double>(es.shape()[0]));
    const Var term = sum(square(sub(mean_r, mean_s)));
    total = matched == 0 ? term : add(total, term);
    ++matched;
  }
  if (matched == 0) throw Error("dm_loss: no synthetic class to match");
  return scale(total, 1.0 / static_cast<double>(matched));
}

}  // namespace pdd
