#include "pdd/nn.hpp"

#include <cmath>

#include "pdd/io.hpp"
#include "pdd/rng.hpp"

namespace pdd {

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'F', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::string_view kMetaPrefix = "meta.";

std::string layer_name(std::string_view kind, std::size_t index, std::string_view field) {
  return std::string(kind) + std::to_string(index) + "." + std::string(field);
}

std::pair<std::size_t, std::size_t> trunk_extent(const ModelSpec& spec) {
  std::size_t h = spec.height, w = spec.width;
  for (std::size_t k = 0; k < spec.depth; ++k) {
    if (h < 2 || w < 2) throw ShapeError("convnet: input too small for depth " + std::to_string(spec.depth));
    h /= 2;
    w /= 2;
  }
  return {h, w};
}

}  // namespace

std::string_view architecture_name(Architecture arch) {
  switch (arch) {
    case Architecture::Linear: return "linear";
    case Architecture::Mlp: return "mlp";
    case Architecture::ConvNet: return "convnet";
  }
  return "?";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "linear") return Architecture::Linear;
  if (name == "mlp") return Architecture::Mlp;
  if (name == "convnet") return Architecture::ConvNet;
  throw Error("unknown architecture '" + std::string(name) + "' (expected linear, mlp or convnet)");
}

void ModelSpec::validate() const {
  if (classes < 2) throw Error("model spec: need at least 2 classes, got " + std::to_string(classes));
  if (channels < 1 || height < 1 || width < 1) throw Error("model spec: empty input shape");
  if (architecture == Architecture::Linear) return;
  if (hidden < 1) throw Error("model spec: width must be at least 1");
  if (depth < 1) throw Error("model spec: depth must be at least 1");
  if (architecture == Architecture::ConvNet) trunk_extent(*this);
}

std::size_t ModelSpec::feature_size() const {
  if (architecture == Architecture::Linear) return channels * height * width;
  if (architecture == Architecture::Mlp) return hidden;
  const auto [h, w] = trunk_extent(*this);
  return hidden * h * w;
}

void Parameters::add(std::string name, Tensor value) {
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

std::size_t Parameters::count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

const Tensor& Parameters::at(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return tensors_[i];
  }
  throw Error("no parameter named '" + std::string(name) + "'");
}

std::vector<Var> Parameters::as_leaves() const {
  std::vector<Var> out;
  for (const auto& t : tensors_) out.push_back(Var::leaf(t));
  return out;
}

std::vector<Var> Parameters::as_constants() const {
  std::vector<Var> out;
  for (const auto& t : tensors_) out.push_back(Var::constant(t));
  return out;
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelSpec& spec) {
  spec.validate();
  std::vector<std::pair<std::string, Shape>> layout;
  if (spec.architecture == Architecture::ConvNet) {
    std::size_t in = spec.channels;
    for (std::size_t k = 0; k < spec.depth; ++k) {
      layout.emplace_back(layer_name("conv", k, "weight"), Shape{spec.hidden, in, 3, 3});
      layout.emplace_back(layer_name("conv", k, "bias"), Shape{spec.hidden});
      in = spec.hidden;
    }
  } else if (spec.architecture == Architecture::Mlp) {
    std::size_t in = spec.channels * spec.height * spec.width;
    for (std::size_t k = 0; k < spec.depth; ++k) {
      layout.emplace_back(layer_name("fc", k, "weight"), Shape{spec.hidden, in});
      layout.emplace_back(layer_name("fc", k, "bias"), Shape{spec.hidden});
      in = spec.hidden;
    }
  }
  layout.emplace_back("head.weight", Shape{spec.classes, spec.feature_size()});
  layout.emplace_back("head.bias", Shape{spec.classes});
  return layout;
}

std::size_t parameter_count(const ModelSpec& spec) {
  std::size_t n = 0;
  for (const auto& [name, shape] : parameter_layout(spec)) n += element_count(shape);
  return n;
}

Parameters init_params(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Parameters params;
  for (const auto& [name, shape] : parameter_layout(spec)) {
    std::vector<double> values(element_count(shape), 0.0);
    if (shape.size() > 1) {
      const double fan_in = static_cast<double>(values.size() / shape[0]);
      const double bound = 1.0 / std::sqrt(fan_in);
      for (auto& v : values) v = rng.uniform(-bound, bound);
    }
    params.add(name, Tensor(shape, std::move(values)));
  }
  return params;
}

Parameters zero_params(const ModelSpec& spec) {
  Parameters params;
  for (const auto& [name, shape] : parameter_layout(spec)) params.add(name, Tensor::zeros(shape));
  return params;
}

void check_structure(const ModelSpec& spec, const Parameters& params) {
  const auto layout = parameter_layout(spec);
  if (layout.size() != params.entries()) {
    throw FormatError("parameter table has " + std::to_string(params.entries()) + " entries, model expects " +
                      std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].first != params.names()[i] || layout[i].second != params.tensors()[i].shape()) {
      throw FormatError("structural mismatch at entry " + std::to_string(i) + ": found '" + params.names()[i] + "' " +
                        shape_string(params.tensors()[i].shape()) + ", model expects '" + layout[i].first + "' " +
                        shape_string(layout[i].second));
    }
  }
}

namespace {

std::size_t trunk_tensors(const ModelSpec& spec) {
  return spec.architecture == Architecture::Linear ? 0 : 2 * spec.depth;
}

void check_batch(const ModelSpec& spec, std::span<const Var> params, const Var& batch) {
  const Shape& s = batch.shape();
  if (s.size() != 4 || s[1] != spec.channels || s[2] != spec.height || s[3] != spec.width) {
    throw ShapeError("forward: batch shape " + shape_string(s) + " does not match model input " +
                     shape_string(spec.input_shape()));
  }
  if (params.size() != trunk_tensors(spec) + 2) {
    throw ShapeError("forward: expected " + std::to_string(trunk_tensors(spec) + 2) + " parameter tensors, got " +
                     std::to_string(params.size()));
  }
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  return add(matmul(x, transpose(weight)), bias);
}

}  // namespace

Var features(const ModelSpec& spec, std::span<const Var> params, const Var& batch) {
  check_batch(spec, params, batch);
  const std::size_t n = batch.shape()[0];
  if (spec.architecture == Architecture::ConvNet) {
    Var x = batch;
    for (std::size_t k = 0; k < spec.depth; ++k) {
      const Var bias = reshape(params[2 * k + 1], {1, spec.hidden, 1, 1});
      x = conv2d(x, params[2 * k], {.stride = 1, .padding = 1}) + bias;
      x = avg_pool2(relu(instance_norm(x)));
    }
    return reshape(x, {n, spec.feature_size()});
  }
  Var x = reshape(batch, {n, spec.channels * spec.height * spec.width});
  if (spec.architecture == Architecture::Linear) return x;
  for (std::size_t k = 0; k < spec.depth; ++k) x = relu(linear(x, params[2 * k], params[2 * k + 1]));
  return x;
}

Var forward(const ModelSpec& spec, std::span<const Var> params, const Var& batch) {
  const Var trunk = features(spec, params, batch);
  const std::size_t head = trunk_tensors(spec);
  return linear(trunk, params[head], params[head + 1]);
}

Tensor forward(const ModelSpec& spec, const Parameters& params, const Tensor& batch) {
  return forward(spec, params.as_constants(), Var::constant(batch)).value();
}

Tensor flatten_params(const Parameters& params) {
  std::vector<double> flat;
  flat.reserve(params.count());
  for (const auto& t : params.tensors()) flat.insert(flat.end(), t.values().begin(), t.values().end());
  const std::size_t n = flat.size();
  return Tensor({n}, std::move(flat));
}

Var flatten_params(std::span<const Var> params) {
  std::vector<Var> parts;
  parts.reserve(params.size());
  for (const auto& p : params) parts.push_back(reshape(p, {p.value().size()}));
  return concat(parts, 0);
}

Parameters unflatten_params(const ModelSpec& spec, const Tensor& flat) {
  if (flat.size() != parameter_count(spec)) {
    throw ShapeError("unflatten_params: vector of " + std::to_string(flat.size()) + " values, model has " +
                     std::to_string(parameter_count(spec)));
  }
  Parameters params;
  std::size_t offset = 0;
  for (const auto& [name, shape] : parameter_layout(spec)) {
    const std::size_t n = element_count(shape);
    params.add(name, Tensor(shape, std::vector<double>(flat.values().begin() + static_cast<std::ptrdiff_t>(offset),
                                                        flat.values().begin() + static_cast<std::ptrdiff_t>(offset + n))));
    offset += n;
  }
  return params;
}

namespace {

void write_entry(ByteWriter& out, std::string_view name, const Tensor& t) {
  out.name(name);
  out.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto extent : t.shape()) out.u64(extent);
  for (double v : t.values()) out.f64(v);
}

Tensor vector_tensor(const std::vector<double>& values) {
  if (values.empty()) return Tensor::zeros({1});
  return Tensor({values.size()}, values);
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  check_structure(checkpoint.spec, checkpoint.params);
  const auto& spec = checkpoint.spec;
  const auto& norm = checkpoint.standardization;
  if (!norm.mean.empty() && (norm.mean.size() != spec.channels || norm.stddev.size() != spec.channels)) {
    throw Error("checkpoint standardization must have one entry per input channel");
  }
  ByteWriter out;
  out.bytes(std::string_view(kCheckpointMagic, 4));
  out.u32(kCheckpointVersion);
  out.u32(static_cast<std::uint32_t>(checkpoint.params.entries() + 3));
  write_entry(out, "meta.spec",
              Tensor({7}, {static_cast<double>(spec.architecture), static_cast<double>(spec.channels),
                           static_cast<double>(spec.height), static_cast<double>(spec.width),
                           static_cast<double>(spec.classes), static_cast<double>(spec.hidden),
                           static_cast<double>(spec.depth)}));
  write_entry(out, "meta.norm_mean", vector_tensor(norm.mean));
  write_entry(out, "meta.norm_std", vector_tensor(norm.stddev));
  for (std::size_t i = 0; i < checkpoint.params.entries(); ++i) {
    write_entry(out, checkpoint.params.names()[i], checkpoint.params.tensors()[i]);
  }
  write_file_atomic(path, out.buffer());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  ByteReader in(raw, path.string());
  const auto magic = in.bytes(4, "magic");
  if (magic != std::string_view(kCheckpointMagic, 4)) {
    throw FormatError(path.string() + ": bad magic '" + std::string(magic) + "', expected 'DFCK'");
  }
  const auto version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  }
  const auto count = in.u32("entry count");
  Checkpoint checkpoint;
  bool have_spec = false;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::string field = "entry " + std::to_string(e);
    std::string name = in.name(field + " name");
    const auto rank = in.u32(field + " rank");
    if (rank > 8) throw FormatError(path.string() + ": " + field + " ('" + name + "') has implausible rank " + std::to_string(rank));
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto extent = in.u64(field + " extent");
      if (extent == 0 || extent > (std::uint64_t{1} << 40)) {
        throw FormatError(path.string() + ": " + field + " ('" + name + "') has invalid extent " + std::to_string(extent));
      }
      shape.push_back(extent);
      n *= extent;
    }
    if (n * sizeof(double) > in.remaining()) {
      throw FormatError(path.string() + ": truncated while reading " + field + " ('" + name + "') payload");
    }
    std::vector<double> values(n);
    for (auto& v : values) v = in.f64(field + " payload");
    Tensor t(std::move(shape), std::move(values));
    if (name == "meta.spec") {
      if (t.size() != 7) throw FormatError(path.string() + ": meta.spec must hold 7 values");
      auto& spec = checkpoint.spec;
      if (t[0] != 0.0 && t[0] != 1.0 && t[0] != 2.0) throw FormatError(path.string() + ": meta.spec has unknown architecture");
      spec.architecture = static_cast<Architecture>(static_cast<int>(t[0]));
      spec.channels = static_cast<std::size_t>(t[1]);
      spec.height = static_cast<std::size_t>(t[2]);
      spec.width = static_cast<std::size_t>(t[3]);
      spec.classes = static_cast<std::size_t>(t[4]);
      spec.hidden = static_cast<std::size_t>(t[5]);
      spec.depth = static_cast<std::size_t>(t[6]);
      have_spec = true;
    } else if (name == "meta.norm_mean") {
      checkpoint.standardization.mean = t.to_vector();
    } else if (name == "meta.norm_std") {
      checkpoint.standardization.stddev = t.to_vector();
    } else if (name.starts_with(kMetaPrefix)) {
      throw FormatError(path.string() + ": unknown metadata entry '" + name + "'");
    } else {
      checkpoint.params.add(std::move(name), std::move(t));
    }
  }
  if (in.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after entry table");
  if (!have_spec) throw FormatError(path.string() + ": missing meta.spec entry");
  try {
    checkpoint.spec.validate();
  } catch (const Error& e) {
    throw FormatError(path.string() + ": invalid meta.spec (" + e.what() + ")");
  }
  if (checkpoint.standardization.mean.size() != checkpoint.spec.channels) checkpoint.standardization = {};
  check_structure(checkpoint.spec, checkpoint.params);
  return checkpoint;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected) {
  Checkpoint checkpoint = load_checkpoint(path);
  check_structure(expected, checkpoint.params);
  if (!(checkpoint.spec == expected)) {
    throw FormatError(path.string() + ": structural mismatch, checkpoint was saved for a different model spec");
  }
  return checkpoint;
}

}  // namespace pdd
