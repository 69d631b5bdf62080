#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "unetseg/image.hpp"

namespace unetseg {

/// Pixel centres are aligned (source = (dst + 0.5) * in / out - 0.5), edge
/// samples clamp. Same-size resizing is the identity.
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);
/// Source index min(in - 1, floor((dst + 0.5) * in / out)).
Mask resize_nearest(const Mask& mask, std::size_t height, std::size_t width);
Sample resize(const Sample& sample, std::size_t size);

/// Gray-world balance: each channel is scaled so its mean matches the mean
/// of the channel means, then clamped to [0, 1]. All-zero channels are kept.
Image color_balance(const Image& image);

struct AugmentParams {
  bool dihedral = true;
  bool rotation = true;
  bool zoom = true;
  bool lighting = true;
  double max_rotation_deg = 44.0;
  double max_zoom = 1.05;
  double max_brightness = 0.05;
  double max_contrast = 0.05;

  void validate() const;
  bool any() const { return dihedral || rotation || zoom || lighting; }
  static AugmentParams none();
};

/// Element k of the dihedral group: k in [0, 4) rotates by k quarter turns,
/// k in [4, 8) mirrors horizontally and then rotates by k - 4 quarter turns.
struct GeometricTransform {
  int dihedral = 0;
  double rotation_deg = 0.0;
  double zoom = 1.0;

  bool is_identity() const { return dihedral == 0 && rotation_deg == 0.0 && zoom == 1.0; }
};

int dihedral_inverse(int element);

/// Applies dihedral, rotation and zoom about the image centre as one affine
/// map with a single resampling pass: bilinear for the image, nearest for the
/// mask, reflection beyond the borders. Non-square samples only accept the
/// dihedral elements that keep their shape.
Sample apply_geometry(const Sample& sample, const GeometricTransform& transform);

/// x -> clamp((x - 0.5) * contrast + 0.5 + brightness, 0, 1).
Image apply_lighting(const Image& image, double brightness, double contrast);

/// Draws one transform and lighting change from the rng and applies them.
Sample augment(const Sample& sample, const AugmentParams& params, std::mt19937_64& rng);
Sample augment(const Sample& sample, const AugmentParams& params, std::uint64_t seed);

/// Deterministic per-sample seed from the run seed, sample id and epoch.
std::uint64_t augmentation_seed(std::uint64_t seed, std::string_view id, std::uint64_t epoch);

}  // namespace unetseg
