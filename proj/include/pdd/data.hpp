#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pdd/kkt.hpp"
#include "pdd/nn.hpp"
#include "pdd/tensor.hpp"

namespace pdd {

struct LabeledSet {
  Tensor images;  // [n, C, H, W]
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  Shape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  void validate() const;
  /// Sample indices grouped by class, each list in ascending order.
  std::vector<std::vector<std::size_t>> indices_by_class() const;
  LabeledSet select(std::span<const std::size_t> indices) const;
  /// Images of class `k` stacked in index order.
  Tensor class_images(std::size_t k) const;

  friend bool operator==(const LabeledSet&, const LabeledSet&) = default;
};

/// CIFAR-10 binary batches: 3073-byte records (label, then 3x32x32 bytes).
/// Pixels are scaled to [0, 1]; standardization is applied separately.
LabeledSet parse_cifar10(std::span<const std::filesystem::path> paths);

/// MNIST IDX pair; gzip-compressed files are read transparently.
LabeledSet parse_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

Standardization compute_standardization(const LabeledSet& set);
LabeledSet standardize(LabeledSet set, const Standardization& norm);
/// Inverse mapping, back to [0, 1] pixel units.
Tensor unstandardize(const Tensor& images, const Standardization& norm);

enum class ToyKind { Blobs, Moons, Separable2d };
ToyKind parse_toy_kind(std::string_view name);

struct ToyOptions {
  ToyKind kind = ToyKind::Separable2d;
  std::size_t per_class = 50;
  std::uint64_t seed = 0;
  /// separable2d only: emit the four-point fixture +-(1,0), +-(2,0).
  bool symmetric = false;
};

/// Two-class 2-D points stored as [n, 1, 1, 2]; class 1 is the positive
/// side for the SVM view.
LabeledSet gen_toy(const ToyOptions& options);

void write_toy_text(const LabeledSet& set, const std::filesystem::path& path);
LabeledSet read_toy_text(const std::filesystem::path& path);

void save_synthetic(const SyntheticSet& set, const std::filesystem::path& path);
SyntheticSet load_synthetic(const std::filesystem::path& path);

struct DatasetSplits {
  std::string name;
  LabeledSet train;
  LabeledSet test;
};

/// `mnist:DIR`, `cifar10:DIR` or `toy:KIND[:PER_CLASS]`. Pixel values are in
/// raw units; callers standardize with statistics of the train split.
DatasetSplits load_dataset(std::string_view spec, std::uint64_t seed);

}  // namespace pdd
