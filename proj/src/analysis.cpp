#include "pdd/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numbers>

#include "pdd/io.hpp"

namespace pdd {

SyntheticSet average_sets(const SyntheticSet& a, const SyntheticSet& b) {
  if (a.images.shape() != b.images.shape()) {
    throw ShapeError("average_sets: " + shape_string(a.images.shape()) + " vs " + shape_string(b.images.shape()));
  }
  if (a.labels != b.labels || a.classes != b.classes) throw Error("average_sets: label sequences differ");
  std::vector<double> mixed(a.images.size());
  for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] = 0.5 * (a.images[i] + b.images[i]);
  SyntheticSet out;
  out.images = Tensor(a.images.shape(), std::move(mixed));
  out.labels = a.labels;
  out.lambdas = Tensor::zeros({a.labels.size()});
  out.classes = a.classes;
  return out;
}

bool is_power_of_two(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

namespace {

void fft1(std::complex<double>* data, std::size_t n, std::size_t stride) {
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i * stride], data[j * stride]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        // Twiddles from the exact angle rather than a running product.
        const std::complex<double> w = std::polar(1.0, angle * static_cast<double>(k));
        auto& lo = data[(start + k) * stride];
        auto& hi = data[(start + k + len / 2) * stride];
        const std::complex<double> t = w * hi;
        hi = lo - t;
        lo += t;
      }
    }
  }
}

std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

Tensor as_channel_stack(const Tensor& image) {
  if (image.rank() == 2) return image.reshape({1, image.dim(0), image.dim(1)});
  if (image.rank() == 3) return image;
  throw ShapeError("expected an [H, W] or [C, H, W] image, got " + shape_string(image.shape()));
}

}  // namespace

void fft2(Spectrum& grid, std::size_t h, std::size_t w) {
  if (!is_power_of_two(h) || !is_power_of_two(w)) throw ShapeError("fft2: extents must be powers of two");
  if (grid.size() != h * w) throw ShapeError("fft2: grid size does not match extents");
  for (std::size_t r = 0; r < h; ++r) fft1(grid.data() + r * w, w, 1);
  for (std::size_t c = 0; c < w; ++c) fft1(grid.data() + c, h, w);
}

Tensor resample_pow2(const Tensor& channel) {
  if (channel.rank() != 2) throw ShapeError("resample_pow2: expected [H, W], got " + shape_string(channel.shape()));
  const std::size_t h = channel.dim(0), w = channel.dim(1);
  const std::size_t nh = next_power_of_two(h), nw = next_power_of_two(w);
  if (nh == h && nw == w) return channel;
  std::vector<double> out(nh * nw);
  auto src = [&](std::size_t y, std::size_t x) { return channel[y * w + x]; };
  for (std::size_t y = 0; y < nh; ++y) {
    // Align corners so the resized grid spans the same extent.
    const double sy = nh > 1 ? static_cast<double>(y) * static_cast<double>(h - 1) / static_cast<double>(nh - 1) : 0.0;
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < nw; ++x) {
      const double sx = nw > 1 ? static_cast<double>(x) * static_cast<double>(w - 1) / static_cast<double>(nw - 1) : 0.0;
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      out[y * nw + x] = (1 - fy) * ((1 - fx) * src(y0, x0) + fx * src(y0, x1)) +
                        fy * ((1 - fx) * src(y1, x0) + fx * src(y1, x1));
    }
  }
  return Tensor({nh, nw}, std::move(out));
}

Tensor fft2_magnitude(const Tensor& channel) {
  const Tensor grid = resample_pow2(channel);
  const std::size_t h = grid.dim(0), w = grid.dim(1);
  Spectrum spec(grid.values().begin(), grid.values().end());
  fft2(spec, h, w);
  std::vector<double> mag(h * w);
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      mag[((u + h / 2) % h) * w + (v + w / 2) % w] = std::abs(spec[u * w + v]);
    }
  }
  return Tensor({h, w}, std::move(mag));
}

double low_freq_energy_ratio(const Tensor& image, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("low_freq_energy_ratio: radius fraction must be in (0, 1]");
  const Tensor stack = as_channel_stack(image);
  const std::size_t c = stack.dim(0), h0 = stack.dim(1), w0 = stack.dim(2);
  double inside = 0.0, total = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const Tensor mag = fft2_magnitude(stack.rows(ch, 1).reshape({h0, w0}));
    const std::size_t h = mag.dim(0), w = mag.dim(1);
    const double cy = static_cast<double>(h / 2), cx = static_cast<double>(w / 2);
    const double radius = fraction * std::hypot(cy, cx);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double e = mag[y * w + x] * mag[y * w + x];
        total += e;
        if (std::hypot(static_cast<double>(y) - cy, static_cast<double>(x) - cx) <= radius) inside += e;
      }
    }
  }
  if (total == 0.0) return 1.0;
  return std::clamp(inside / total, 0.0, 1.0);
}

MontageLayout montage_layout(const SyntheticSet& set) {
  std::vector<std::size_t> counts(set.classes, 0);
  for (std::size_t y : set.labels) ++counts.at(y);
  return {std::max<std::size_t>(1, *std::max_element(counts.begin(), counts.end())), set.classes};
}

void export_images(const SyntheticSet& set, const std::filesystem::path& path) {
  set.validate();
  const std::size_t c = set.images.dim(1), h = set.images.dim(2), w = set.images.dim(3);
  if (c != 1 && c != 3) throw ShapeError("export_images: expected 1 or 3 channels, got " + std::to_string(c));
  const MontageLayout layout = montage_layout(set);
  const std::size_t width = layout.cols * w, height = layout.rows * h;
  std::vector<unsigned char> rgb(width * height * 3, 0);
  std::vector<std::size_t> slot(set.classes, 0);
  const std::size_t stride = c * h * w;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::size_t row = slot[set.labels[i]]++, col = set.labels[i];
    const auto img = set.images.values().subspan(i * stride, stride);
    const auto [lo, hi] = std::minmax_element(img.begin(), img.end());
    const double range = *hi - *lo;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t k = 0; k < 3; ++k) {
          const double v = img[(c == 1 ? 0 : k) * h * w + y * w + x];
          const double scaled = range > 0.0 ? std::round(255.0 * (v - *lo) / range) : 128.0;
          rgb[(((row * h + y) * width) + col * w + x) * 3 + k] = static_cast<unsigned char>(scaled);
        }
      }
    }
  }
  std::string bytes = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  bytes.append(rgb.begin(), rgb.end());
  write_file_atomic(path, bytes);
}

PpmImage read_ppm(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError(path.string() + ": truncated PPM header");
    return bytes.substr(start, pos - start);
  };
  if (token() != "P6") throw FormatError(path.string() + ": not a binary PPM (P6)");
  PpmImage img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (token() != "255") throw FormatError(path.string() + ": unsupported PPM max value");
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ": malformed PPM header");
  }
  ++pos;  // single whitespace before the raster
  const std::size_t need = img.width * img.height * 3;
  if (bytes.size() < pos || bytes.size() - pos != need) {
    throw FormatError(path.string() + ": PPM raster has the wrong size");
  }
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

std::string frequency_summary(const std::string& name, const SyntheticSet& set, double fraction) {
  set.validate();
  std::vector<double> sums(set.classes, 0.0);
  std::vector<std::size_t> counts(set.classes, 0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Tensor img = set.images.rows(i, 1);
    sums[set.labels[i]] += low_freq_energy_ratio(img.reshape({img.dim(1), img.dim(2), img.dim(3)}), fraction);
    ++counts[set.labels[i]];
  }
  std::string out;
  for (std::size_t k = 0; k < set.classes; ++k) {
    if (counts[k] == 0) continue;
    nlohmann::ordered_json j;
    j["set"] = name;
    j["class"] = k;
    j["low_freq_ratio"] = sums[k] / static_cast<double>(counts[k]);
    j["radius"] = fraction;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace pdd
