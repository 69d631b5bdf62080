#pragma once

#include <filesystem>

#include "unetseg/image.hpp"

namespace unetseg {

/// 8-bit RGB (grayscale files are expanded), values scaled to [0, 1].
Image read_png_rgb(const std::filesystem::path& path);
/// Writes round(255 * v) per channel, clamped; 1- or 3-channel images.
void write_png_rgb(const Image& image, const std::filesystem::path& path);

/// Raw 8-bit grayscale plane, no binarisation.
struct GrayPlane {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;
};
GrayPlane read_png_gray(const std::filesystem::path& path);

/// Mask written as 0/255.
void write_png_mask(const Mask& mask, const std::filesystem::path& path);

/// One-channel probability map as 16-bit grayscale, round(65535 * p).
void write_png_probability(const Image& probability, const std::filesystem::path& path);
Image read_png_probability(const std::filesystem::path& path);

}  // namespace unetseg
