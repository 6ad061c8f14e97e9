#pragma once

#include <complex>
#include <filesystem>
#include <string>
#include <vector>

#include "pdd/kkt.hpp"
#include "pdd/tensor.hpp"

namespace pdd {

/// Pixelwise mean of two sets with identical shapes and labels; the result
/// carries zero multipliers.
SyntheticSet average_sets(const SyntheticSet& a, const SyntheticSet& b);

using Spectrum = std::vector<std::complex<double>>;

/// In-place radix-2 DFT of a row-major h x w grid; both sides must be powers
/// of two.
void fft2(Spectrum& grid, std::size_t h, std::size_t w);

bool is_power_of_two(std::size_t n);

/// Bilinear resize of an [H, W] channel to the next powers of two; returns
/// the input unchanged when it already has such extents.
Tensor resample_pow2(const Tensor& channel);

/// |FFT| of an [H, W] channel with the DC bin moved to (H/2, W/2).
Tensor fft2_magnitude(const Tensor& channel);

/// Share of spectral energy inside the centered disc whose radius is
/// `fraction` of the centre-to-corner distance. Accepts [H, W] or [C, H, W];
/// channel energies are pooled. An all-zero image counts as 1.
double low_freq_energy_ratio(const Tensor& image, double fraction);

struct MontageLayout {
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// One column per class, one row per image index within its class.
MontageLayout montage_layout(const SyntheticSet& set);

/// Binary PPM montage; each image is min-max scaled to [0, 255] on its own,
/// a constant image becomes mid-gray (128). Single-channel images are
/// replicated to RGB.
void export_images(const SyntheticSet& set, const std::filesystem::path& path);

struct PpmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<unsigned char> rgb;
};

PpmImage read_ppm(const std::filesystem::path& path);

/// One JSON line per class: {"set", "class", "low_freq_ratio", "radius"},
/// the ratio averaged over that class's images.
std::string frequency_summary(const std::string& name, const SyntheticSet& set, double fraction = 0.25);

}  // namespace pdd
