#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdd/autodiff.hpp"
#include "pdd/tensor.hpp"

namespace pdd {

enum class Architecture { Linear, Mlp, ConvNet };

std::string_view architecture_name(Architecture arch);
Architecture parse_architecture(std::string_view name);

/// Shape of a classifier. For the ConvNet, each of the `depth` blocks is
/// conv 3x3 (pad 1) -> instance norm -> relu -> 2x2 average pool with
/// `hidden` channels, followed by a linear head. For the MLP, `depth`
/// hidden layers of `hidden` units with relu, then a linear head. Linear is
/// the head alone; `hidden` and `depth` are ignored.
struct ModelSpec {
  Architecture architecture = Architecture::ConvNet;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t classes = 10;
  std::size_t hidden = 128;
  std::size_t depth = 3;

  void validate() const;
  Shape input_shape() const { return {channels, height, width}; }
  /// Length of the flattened trunk output (the input to the head).
  std::size_t feature_size() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Named parameter tensors in a fixed order.
class Parameters {
 public:
  void add(std::string name, Tensor value);

  std::size_t entries() const noexcept { return tensors_.size(); }
  /// Total number of scalars.
  std::size_t count() const noexcept;
  std::span<const std::string> names() const noexcept { return names_; }
  std::span<const Tensor> tensors() const noexcept { return tensors_; }
  const Tensor& at(std::string_view name) const;

  std::vector<Var> as_leaves() const;
  std::vector<Var> as_constants() const;

  friend bool operator==(const Parameters&, const Parameters&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

/// Names and shapes of every parameter of `spec`, in storage order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelSpec& spec);
std::size_t parameter_count(const ModelSpec& spec);

/// Weights uniform in +-1/sqrt(fan_in), biases zero.
Parameters init_params(const ModelSpec& spec, std::uint64_t seed);
Parameters zero_params(const ModelSpec& spec);

/// Throws if names or shapes of `params` differ from the layout of `spec`.
void check_structure(const ModelSpec& spec, const Parameters& params);

/// Logits [N, classes] for a batch [N, C, H, W]. `params` follow
/// parameter_layout order.
Var forward(const ModelSpec& spec, std::span<const Var> params, const Var& batch);
Tensor forward(const ModelSpec& spec, const Parameters& params, const Tensor& batch);
/// Flattened trunk output [N, feature_size()] (no head).
Var features(const ModelSpec& spec, std::span<const Var> params, const Var& batch);

Tensor flatten_params(const Parameters& params);
Var flatten_params(std::span<const Var> params);
Parameters unflatten_params(const ModelSpec& spec, const Tensor& flat);

/// Per-channel affine normalization applied to raw [0, 1] pixels.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> stddev;

  friend bool operator==(const Standardization&, const Standardization&) = default;
};

struct Checkpoint {
  ModelSpec spec;
  Parameters params;
  Standardization standardization;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Loads and verifies the parameter table against `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected);

}  // namespace pdd
