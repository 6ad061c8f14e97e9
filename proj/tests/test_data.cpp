#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "pdd/data.hpp"
#include "pdd/io.hpp"
#include "test_util.hpp"

namespace pdd {
namespace {

using testing::random_tensor;

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::path(::testing::TempDir()) / name;
}

std::string big_endian(std::uint32_t v) {
  return {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
}

void write_idx_pair(const std::filesystem::path& images, const std::filesystem::path& labels, std::uint32_t image_magic,
                    std::uint32_t label_magic) {
  std::string img = big_endian(image_magic) + big_endian(3) + big_endian(2) + big_endian(2);
  for (int i = 0; i < 12; ++i) img.push_back(static_cast<char>(i * 20));
  write_file_atomic(images, img);
  write_file_atomic(labels, big_endian(label_magic) + big_endian(3) + std::string{7, 0, 9});
}

TEST(Cifar10, ParsesRecords) {
  std::string raw;
  for (int r = 0; r < 2; ++r) {
    raw.push_back(static_cast<char>(r == 0 ? 3 : 9));
    for (int p = 0; p < 3072; ++p) raw.push_back(static_cast<char>(p == 0 ? 255 : p % 256));
  }
  EXPECT_EQ(raw.size(), 2u * 3073u);
  const auto path = temp_path("batch.bin");
  write_file_atomic(path, raw);
  const std::vector<std::filesystem::path> paths{path};
  const LabeledSet set = parse_cifar10(paths);
  EXPECT_EQ(set.size(), 2u);
  EXPECT_EQ(set.images.shape(), (Shape{2, 3, 32, 32}));
  EXPECT_EQ(set.labels, (std::vector<std::size_t>{3, 9}));
  EXPECT_EQ(set.images[0], 1.0);
  EXPECT_EQ(set.images[1], 1.0 / 255.0);

  write_file_atomic(path, raw.substr(0, 3073 + 100));
  EXPECT_THROW(parse_cifar10(paths), FormatError);
}

TEST(Idx, ParsesHeaderAndPixels) {
  const auto images = temp_path("img.idx"), labels = temp_path("lab.idx");
  write_idx_pair(images, labels, 0x803, 0x801);
  const LabeledSet set = parse_idx(images, labels);
  EXPECT_EQ(set.images.shape(), (Shape{3, 1, 2, 2}));
  EXPECT_EQ(set.labels, (std::vector<std::size_t>{7, 0, 9}));
  EXPECT_EQ(set.images[1], 20.0 / 255.0);
}

TEST(Idx, LabelMagicMismatchNamesBothValues) {
  const auto images = temp_path("img2.idx"), labels = temp_path("lab2.idx");
  write_idx_pair(images, labels, 0x803, 0x803);
  try {
    parse_idx(images, labels);
    FAIL();
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("0x00000801"), std::string::npos) << msg;
    EXPECT_NE(msg.find("0x00000803"), std::string::npos) << msg;
  }
}

TEST(Idx, BundledSubsetLoads) {
  const auto splits = load_dataset(std::string("mnist:") + PDD_SOURCE_DIR + "/data/mnist5k", 0);
  EXPECT_EQ(splits.train.images.shape(), (Shape{4000, 1, 28, 28}));
  EXPECT_EQ(splits.test.size(), 1000u);
  for (const auto& members : splits.train.indices_by_class()) EXPECT_EQ(members.size(), 400u);
  double lo = 1.0, hi = 0.0;
  for (double v : splits.train.images.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
}

TEST(Standardization, ZeroMeanUnitVarianceAndInverse) {
  const LabeledSet set{random_tensor({6, 3, 4, 4}, 1, 0.0, 1.0), {0, 1, 0, 1, 0, 1}, 2};
  const auto norm = compute_standardization(set);
  const auto out = standardize(set, norm);
  const auto again = compute_standardization(out);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(again.mean[c], 0.0, 1e-12);
    EXPECT_NEAR(again.stddev[c], 1.0, 1e-12);
  }
  EXPECT_LE(max_abs_difference(unstandardize(out.images, norm), set.images), 1e-12);
}

TEST(Toy, SymmetricFixture) {
  const LabeledSet set = gen_toy({.kind = ToyKind::Separable2d, .symmetric = true});
  EXPECT_EQ(set.images, Tensor({4, 1, 1, 2}, {-1, 0, -2, 0, 1, 0, 2, 0}));
  EXPECT_EQ(set.labels, (std::vector<std::size_t>{0, 0, 1, 1}));
}

TEST(Toy, DeterministicPerSeed) {
  for (auto kind : {ToyKind::Blobs, ToyKind::Moons, ToyKind::Separable2d}) {
    const ToyOptions options{.kind = kind, .per_class = 20, .seed = 4};
    EXPECT_TRUE(gen_toy(options) == gen_toy(options));
    ToyOptions other = options;
    other.seed = 5;
    EXPECT_FALSE(gen_toy(options) == gen_toy(other));
  }
}

TEST(Toy, BlobMeansAreFourSigmaApart) {
  const LabeledSet set = gen_toy({.kind = ToyKind::Blobs, .per_class = 4000, .seed = 6});
  double mean[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < set.size(); ++i) {
    mean[set.labels[i]][0] += set.images[2 * i] / 4000.0;
    mean[set.labels[i]][1] += set.images[2 * i + 1] / 4000.0;
  }
  const double distance = std::hypot(mean[1][0] - mean[0][0], mean[1][1] - mean[0][1]);
  EXPECT_NEAR(distance, 4.0, 0.1);
}

TEST(Toy, SeparableClassesKeepHalfUnitGap) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const LabeledSet set = gen_toy({.kind = ToyKind::Separable2d, .per_class = 30, .seed = seed});
    double closest = 1e9;
    for (std::size_t i = 0; i < set.size(); ++i) {
      for (std::size_t j = 0; j < set.size(); ++j) {
        if (set.labels[i] == 0 && set.labels[j] == 1) {
          closest = std::min(closest, std::hypot(set.images[2 * i] - set.images[2 * j],
                                                 set.images[2 * i + 1] - set.images[2 * j + 1]));
        }
      }
    }
    EXPECT_GE(closest, 0.5);
  }
}

TEST(Toy, SplitsShareOneGenerator) {
  const auto splits = load_dataset("toy:separable2d:25", 3);
  EXPECT_EQ(splits.train.size(), 50u);
  EXPECT_EQ(splits.test.size(), 50u);
  EXPECT_FALSE(splits.train == splits.test);
  EXPECT_THROW(load_dataset("toy:spirals", 3), Error);
  EXPECT_THROW(load_dataset("imagenet:/x", 3), Error);
}

TEST(Toy, TextRoundTrip) {
  const LabeledSet set = gen_toy({.kind = ToyKind::Moons, .per_class = 7, .seed = 8});
  const auto path = temp_path("moons.txt");
  write_toy_text(set, path);
  EXPECT_TRUE(read_toy_text(path) == set);
  write_file_atomic(path, "1.0 2.0 1\n1.0 x 0\n");
  EXPECT_THROW(read_toy_text(path), FormatError);
}

TEST(Synthetic, RoundTripIsBitExact) {
  const SyntheticSet set{random_tensor({4, 1, 28, 28}, 9), {0, 3, 3, 9}, Tensor({4}, {0.0, 0.25, 0.0, 1e-300}), 10};
  const auto path = temp_path("set.dfss");
  save_synthetic(set, path);
  const SyntheticSet loaded = load_synthetic(path);
  EXPECT_TRUE(loaded == set);
  EXPECT_EQ(loaded.lambdas[0], 0.0);
  EXPECT_FALSE(std::signbit(loaded.lambdas[2]));
}

TEST(Synthetic, RejectsCheckpointsAndTruncation) {
  const auto ckpt = temp_path("model.dfck");
  const ModelSpec spec{.architecture = Architecture::Linear, .channels = 1, .height = 1, .width = 2, .classes = 2};
  save_checkpoint({spec, init_params(spec, 1), {}}, ckpt);
  try {
    load_synthetic(ckpt);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos) << e.what();
  }
  const auto path = temp_path("short.dfss");
  save_synthetic({random_tensor({2, 1, 2, 2}, 2), {0, 1}, Tensor({2}, {0.5, 0.5}), 2}, path);
  const std::string full = read_file(path);
  write_file_atomic(path, full.substr(0, full.size() - 8));
  EXPECT_THROW(load_synthetic(path), FormatError);
  std::string bumped = full;
  bumped[4] = 2;
  write_file_atomic(path, bumped);
  EXPECT_THROW(load_synthetic(path), FormatError);
}

TEST(LabeledSetOps, SelectAndGroup) {
  const LabeledSet set{random_tensor({5, 1, 2, 2}, 3), {1, 0, 1, 2, 0}, 3};
  const auto groups = set.indices_by_class();
  EXPECT_EQ(groups[0], (std::vector<std::size_t>{1, 4}));
  EXPECT_EQ(groups[2], (std::vector<std::size_t>{3}));
  const Tensor ones = set.class_images(1);
  EXPECT_EQ(ones.rows(0, 1), set.images.rows(0, 1));
  EXPECT_EQ(ones.rows(1, 1), set.images.rows(2, 1));
}

}  // namespace
}  // namespace pdd
