#include "pdd/data.hpp"

#include <zlib.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "pdd/io.hpp"
#include "pdd/rng.hpp"

namespace pdd {

void LabeledSet::validate() const {
  if (classes < 2) throw Error("labeled set: need at least 2 classes");
  if (images.rank() != 4) throw ShapeError("labeled set: images must be [n, C, H, W], got " + shape_string(images.shape()));
  if (images.dim(0) != labels.size()) {
    throw ShapeError("labeled set: " + std::to_string(labels.size()) + " labels for " + std::to_string(images.dim(0)) +
                     " images");
  }
  for (auto y : labels) {
    if (y >= classes) throw Error("labeled set: label " + std::to_string(y) + " out of range");
  }
}

std::vector<std::vector<std::size_t>> LabeledSet::indices_by_class() const {
  std::vector<std::vector<std::size_t>> out(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) out.at(labels[i]).push_back(i);
  return out;
}

LabeledSet LabeledSet::select(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw Error("select: empty index list");
  const std::size_t stride = images.size() / images.dim(0);
  std::vector<double> values;
  values.reserve(indices.size() * stride);
  std::vector<std::size_t> picked;
  picked.reserve(indices.size());
  for (auto i : indices) {
    if (i >= labels.size()) throw Error("select: index " + std::to_string(i) + " out of range");
    const auto row = images.values().subspan(i * stride, stride);
    values.insert(values.end(), row.begin(), row.end());
    picked.push_back(labels[i]);
  }
  Shape shape = images.shape();
  shape[0] = indices.size();
  return {Tensor(std::move(shape), std::move(values)), std::move(picked), classes};
}

Tensor LabeledSet::class_images(std::size_t k) const {
  const auto groups = indices_by_class();
  if (k >= classes || groups[k].empty()) throw Error("class " + std::to_string(k) + " has no samples");
  return select(groups[k]).images;
}

LabeledSet parse_cifar10(std::span<const std::filesystem::path> paths) {
  constexpr std::size_t kRecord = 3073, kPixels = 3072;
  std::vector<double> values;
  std::vector<std::size_t> labels;
  for (const auto& path : paths) {
    const std::string raw = read_file(path);
    if (raw.empty() || raw.size() % kRecord != 0) {
      throw FormatError(path.string() + ": corrupt CIFAR-10 batch, size " + std::to_string(raw.size()) +
                        " is not a positive multiple of 3073");
    }
    for (std::size_t r = 0; r < raw.size() / kRecord; ++r) {
      const auto* rec = reinterpret_cast<const unsigned char*>(raw.data()) + r * kRecord;
      if (rec[0] > 9) throw FormatError(path.string() + ": record " + std::to_string(r) + " has label " + std::to_string(rec[0]));
      labels.push_back(rec[0]);
      for (std::size_t p = 0; p < kPixels; ++p) values.push_back(rec[1 + p] / 255.0);
    }
  }
  if (labels.empty()) throw FormatError("no CIFAR-10 files given");
  const std::size_t n = labels.size();
  return {Tensor({n, 3, 32, 32}, std::move(values)), std::move(labels), 10};
}

namespace {

std::string read_maybe_gzip(const std::filesystem::path& path) {
  gzFile file = gzopen(path.string().c_str(), "rb");
  if (file == nullptr) throw Error("cannot open " + path.string() + " for reading");
  std::string out;
  char buffer[1 << 16];
  int got;
  while ((got = gzread(file, buffer, sizeof buffer)) > 0) out.append(buffer, static_cast<std::size_t>(got));
  const bool failed = got < 0;
  gzclose(file);
  if (failed) throw FormatError(path.string() + ": corrupt gzip stream");
  return out;
}

std::uint32_t big_endian_u32(ByteReader& in, std::string_view field) {
  const auto raw = in.bytes(4, field);
  const auto* b = reinterpret_cast<const unsigned char*>(raw.data());
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

std::string hex(std::uint32_t v) {
  std::ostringstream out;
  out << "0x" << std::hex << std::setw(8) << std::setfill('0') << v;
  return out.str();
}

void expect_magic(ByteReader& in, std::uint32_t expected) {
  const auto magic = big_endian_u32(in, "magic");
  if (magic != expected) {
    throw FormatError(in.source() + ": bad IDX magic, expected " + hex(expected) + ", got " + hex(magic));
  }
}

}  // namespace

LabeledSet parse_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const std::string image_bytes = read_maybe_gzip(images);
  ByteReader img(image_bytes, images.string());
  expect_magic(img, 0x00000803);
  const std::size_t n = big_endian_u32(img, "image count");
  const std::size_t rows = big_endian_u32(img, "row count");
  const std::size_t cols = big_endian_u32(img, "column count");
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(images.string() + ": empty IDX image header");
  const auto pixels = img.bytes(n * rows * cols, "pixels");
  if (img.remaining() != 0) throw FormatError(images.string() + ": trailing bytes after pixel data");

  const std::string label_bytes = read_maybe_gzip(labels);
  ByteReader lab(label_bytes, labels.string());
  expect_magic(lab, 0x00000801);
  const std::size_t m = big_endian_u32(lab, "label count");
  if (m != n) {
    throw FormatError(labels.string() + ": " + std::to_string(m) + " labels for " + std::to_string(n) + " images");
  }
  const auto raw_labels = lab.bytes(n, "labels");

  std::vector<double> values(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) values[i] = static_cast<unsigned char>(pixels[i]) / 255.0;
  std::vector<std::size_t> out_labels(n);
  std::size_t classes = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out_labels[i] = static_cast<unsigned char>(raw_labels[i]);
    classes = std::max(classes, out_labels[i] + 1);
  }
  LabeledSet set{Tensor({n, 1, rows, cols}, std::move(values)), std::move(out_labels), std::max<std::size_t>(classes, 10)};
  set.validate();
  return set;
}

Standardization compute_standardization(const LabeledSet& set) {
  const std::size_t n = set.images.dim(0), c = set.images.dim(1);
  const std::size_t plane = set.images.dim(2) * set.images.dim(3);
  Standardization norm{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  const auto v = set.images.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < plane; ++p) total += v[(i * c + ch) * plane + p];
    }
    const double mean = total / static_cast<double>(n * plane);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < plane; ++p) {
        const double d = v[(i * c + ch) * plane + p] - mean;
        sq += d * d;
      }
    }
    const double stddev = std::sqrt(sq / static_cast<double>(n * plane));
    norm.mean[ch] = mean;
    norm.stddev[ch] = stddev > 0.0 ? stddev : 1.0;
  }
  return norm;
}

namespace {

Tensor per_channel(const Tensor& images, const Standardization& norm, bool forward) {
  const std::size_t c = images.dim(1), plane = images.dim(2) * images.dim(3);
  if (norm.mean.size() != c || norm.stddev.size() != c) {
    throw ShapeError("standardization has " + std::to_string(norm.mean.size()) + " channels, images have " +
                     std::to_string(c));
  }
  std::vector<double> out = images.to_vector();
  for (std::size_t k = 0; k < out.size(); ++k) {
    const std::size_t ch = (k / plane) % c;
    out[k] = forward ? (out[k] - norm.mean[ch]) / norm.stddev[ch] : out[k] * norm.stddev[ch] + norm.mean[ch];
  }
  return Tensor(images.shape(), std::move(out));
}

}  // namespace

LabeledSet standardize(LabeledSet set, const Standardization& norm) {
  set.images = per_channel(set.images, norm, true);
  return set;
}

Tensor unstandardize(const Tensor& images, const Standardization& norm) { return per_channel(images, norm, false); }

ToyKind parse_toy_kind(std::string_view name) {
  if (name == "blobs") return ToyKind::Blobs;
  if (name == "moons") return ToyKind::Moons;
  if (name == "separable2d") return ToyKind::Separable2d;
  throw Error("unknown toy dataset '" + std::string(name) + "' (expected blobs, moons or separable2d)");
}

LabeledSet gen_toy(const ToyOptions& options) {
  if (options.per_class < 1) throw Error("gen_toy: need at least one point per class");
  std::vector<double> xy;
  std::vector<std::size_t> labels;
  auto emit = [&](double x, double y, std::size_t label) {
    xy.push_back(x);
    xy.push_back(y);
    labels.push_back(label);
  };
  Rng rng(options.seed);
  switch (options.kind) {
    case ToyKind::Blobs:
      // Unit-variance clusters centred at +-(2, 0): means 4 sigma apart.
      for (std::size_t label = 0; label < 2; ++label) {
        const double cx = label == 1 ? 2.0 : -2.0;
        for (std::size_t i = 0; i < options.per_class; ++i) emit(cx + rng.normal(), rng.normal(), label);
      }
      break;
    case ToyKind::Moons:
      for (std::size_t label = 0; label < 2; ++label) {
        for (std::size_t i = 0; i < options.per_class; ++i) {
          const double t = rng.uniform(0.0, std::numbers::pi);
          const double x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
          const double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
          emit(x + 0.1 * rng.normal(), y + 0.1 * rng.normal(), label);
        }
      }
      break;
    case ToyKind::Separable2d:
      if (options.symmetric) {
        emit(-1.0, 0.0, 0);
        emit(-2.0, 0.0, 0);
        emit(1.0, 0.0, 1);
        emit(2.0, 0.0, 1);
        break;
      }
      {
        // Distance to a random line through a random offset is at least 0.25
        // on each side, so the classes are separated by a gap of 0.5.
        const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double nx = std::cos(phi), ny = std::sin(phi);
        const double offset = rng.uniform(-0.5, 0.5);
        for (std::size_t label = 0; label < 2; ++label) {
          const double side = label == 1 ? 1.0 : -1.0;
          for (std::size_t i = 0; i < options.per_class; ++i) {
            const double d = side * rng.uniform(0.25, 2.25) + offset;
            const double t = rng.uniform(-2.0, 2.0);
            emit(d * nx - t * ny, d * ny + t * nx, label);
          }
        }
      }
      break;
  }
  const std::size_t n = labels.size();
  return {Tensor({n, 1, 1, 2}, std::move(xy)), std::move(labels), 2};
}

void write_toy_text(const LabeledSet& set, const std::filesystem::path& path) {
  set.validate();
  const std::size_t d = set.images.size() / set.size();
  std::ostringstream out;
  out << std::setprecision(17);
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t k = 0; k < d; ++k) out << set.images[i * d + k] << ' ';
    out << set.labels[i] << '\n';
  }
  write_file_atomic(path, out.str());
}

LabeledSet read_toy_text(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t width = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<double> row;
    std::string token;
    while (fields >> token) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(token, &used));
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": not a number '" + token + "'");
      }
    }
    if (row.empty()) continue;
    if (row.size() < 2) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": need features and a label");
    if (width == 0) width = row.size() - 1;
    if (row.size() - 1 != width) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                        " features, got " + std::to_string(row.size() - 1));
    }
    const double label = row.back();
    if (label != 0.0 && label != 1.0 && label != -1.0) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": label must be 0/1 or -1/+1");
    }
    labels.push_back(label > 0.0 ? 1 : 0);
    values.insert(values.end(), row.begin(), row.end() - 1);
  }
  if (labels.empty()) throw FormatError(path.string() + ": no points");
  const std::size_t n = labels.size();
  return {Tensor({n, 1, 1, width}, std::move(values)), std::move(labels), 2};
}

namespace {
constexpr std::string_view kSyntheticMagic = "DFSS";
constexpr std::uint32_t kSyntheticVersion = 1;
}  // namespace

void save_synthetic(const SyntheticSet& set, const std::filesystem::path& path) {
  set.validate();
  ByteWriter out;
  out.bytes(kSyntheticMagic);
  out.u32(kSyntheticVersion);
  for (std::size_t axis = 0; axis < 4; ++axis) out.u64(set.images.dim(axis));
  out.u64(set.classes);
  for (auto y : set.labels) out.u64(y);
  for (double l : set.lambdas.values()) out.f64(l);
  for (double v : set.images.values()) out.f64(v);
  write_file_atomic(path, out.buffer());
}

SyntheticSet load_synthetic(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  ByteReader in(raw, path.string());
  const auto magic = in.bytes(4, "magic");
  if (magic != kSyntheticMagic) {
    throw FormatError(path.string() + ": bad magic '" + std::string(magic) + "', expected 'DFSS' (not a synthetic set)");
  }
  const auto version = in.u32("version");
  if (version != kSyntheticVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  Shape shape(4);
  for (std::size_t axis = 0; axis < 4; ++axis) {
    shape[axis] = in.u64("image extent");
    if (shape[axis] == 0 || shape[axis] > (std::uint64_t{1} << 32)) {
      throw FormatError(path.string() + ": invalid image extent " + std::to_string(shape[axis]));
    }
  }
  const std::size_t classes = in.u64("class count");
  const std::size_t n = shape[0];
  const std::size_t pixels = element_count(shape);
  if ((n * 2 + pixels) * 8 != in.remaining()) {
    throw FormatError(path.string() + ": payload of " + std::to_string(in.remaining()) + " bytes does not match shape " +
                      shape_string(shape) + " (truncated or corrupt)");
  }
  SyntheticSet set;
  set.classes = classes;
  set.labels.resize(n);
  for (auto& y : set.labels) y = in.u64("labels");
  std::vector<double> lambdas(n), images(pixels);
  for (auto& l : lambdas) l = in.f64("multipliers");
  for (auto& v : images) v = in.f64("images");
  set.lambdas = Tensor({n}, std::move(lambdas));
  set.images = Tensor(std::move(shape), std::move(images));
  try {
    set.validate();
  } catch (const Error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return set;
}

namespace {

std::filesystem::path first_existing(const std::filesystem::path& dir, std::initializer_list<const char*> names) {
  for (const char* name : names) {
    const auto candidate = dir / name;
    if (std::filesystem::exists(candidate)) return candidate;
  }
  throw Error("none of the expected files found in " + dir.string() + " (looked for " + *names.begin() + ")");
}

}  // namespace

DatasetSplits load_dataset(std::string_view spec, std::uint64_t seed) {
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos) throw Error("dataset spec '" + std::string(spec) + "' must look like KIND:ARG");
  const std::string kind(spec.substr(0, colon));
  const std::string arg(spec.substr(colon + 1));
  DatasetSplits out;
  out.name = std::string(spec);
  if (kind == "mnist") {
    const std::filesystem::path dir(arg);
    out.train = parse_idx(first_existing(dir, {"train-images-idx3-ubyte.gz", "train-images-idx3-ubyte"}),
                          first_existing(dir, {"train-labels-idx1-ubyte.gz", "train-labels-idx1-ubyte"}));
    out.test = parse_idx(first_existing(dir, {"t10k-images-idx3-ubyte.gz", "t10k-images-idx3-ubyte"}),
                         first_existing(dir, {"t10k-labels-idx1-ubyte.gz", "t10k-labels-idx1-ubyte"}));
  } else if (kind == "cifar10") {
    const std::filesystem::path dir(arg);
    std::vector<std::filesystem::path> train;
    for (int b = 1; b <= 5; ++b) train.push_back(dir / ("data_batch_" + std::to_string(b) + ".bin"));
    const std::vector<std::filesystem::path> test{dir / "test_batch.bin"};
    out.train = parse_cifar10(train);
    out.test = parse_cifar10(test);
  } else if (kind == "toy") {
    const auto sep = arg.find(':');
    ToyOptions options;
    options.kind = parse_toy_kind(arg.substr(0, sep));
    if (arg.substr(0, sep) == "separable2d" && sep != std::string::npos && arg.substr(sep + 1) == "symmetric") {
      options.symmetric = true;
    } else if (sep != std::string::npos) {
      options.per_class = std::stoul(arg.substr(sep + 1));
    }
    options.seed = Rng::derive(seed, 1);
    if (options.symmetric) {
      out.train = gen_toy(options);
      out.test = out.train;
    } else {
      // One draw split per class, so both halves share the generating line.
      options.per_class *= 2;
      const LabeledSet all = gen_toy(options);
      std::vector<std::size_t> train_idx, test_idx;
      for (const auto& members : all.indices_by_class()) {
        const std::size_t half = members.size() / 2;
        train_idx.insert(train_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(half));
        test_idx.insert(test_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(half), members.end());
      }
      out.train = all.select(train_idx);
      out.test = all.select(test_idx);
    }
  } else {
    throw Error("unknown dataset kind '" + kind + "' (expected mnist, cifar10 or toy)");
  }
  return out;
}

}  // namespace pdd
