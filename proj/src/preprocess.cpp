#include "unetseg/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "unetseg/error.hpp"
#include "unetseg/log.hpp"

namespace unetseg {

namespace {

double source_coordinate(std::size_t dst, std::size_t in, std::size_t out) {
  return (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
}

double reflect(double v, double last) {
  if (last <= 0.0) return 0.0;
  const double period = 2.0 * last;
  v = std::fmod(std::abs(v), period);
  return v > last ? period - v : v;
}

float bilinear(const Image& image, std::size_t c, double sy, double sx) {
  const double fy = std::floor(sy), fx = std::floor(sx);
  const auto y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
  const std::size_t y1 = std::min(y0 + 1, image.height - 1), x1 = std::min(x0 + 1, image.width - 1);
  const double wy = sy - fy, wx = sx - fx;
  const double top = image.at(c, y0, x0) * (1.0 - wx) + image.at(c, y0, x1) * wx;
  const double bottom = image.at(c, y1, x0) * (1.0 - wx) + image.at(c, y1, x1) * wx;
  return static_cast<float>(top * (1.0 - wy) + bottom * wy);
}

using Matrix = std::array<double, 4>;  // row-major 2x2 acting on (x, y)

Matrix multiply(const Matrix& a, const Matrix& b) {
  return {a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3],
          a[2] * b[0] + a[3] * b[2], a[2] * b[1] + a[3] * b[3]};
}

Matrix dihedral_matrix(int element) {
  const Matrix quarter{0, -1, 1, 0};
  Matrix m = element >= 4 ? Matrix{-1, 0, 0, 1} : Matrix{1, 0, 0, 1};
  for (int i = 0; i < element % 4; ++i) m = multiply(quarter, m);
  return m;
}

}  // namespace

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0 || image.plane() == 0) throw ContractError("resize to or from an empty image");
  Image out(image.channels, height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = std::clamp(source_coordinate(y, image.height, height), 0.0, image.height - 1.0);
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = std::clamp(source_coordinate(x, image.width, width), 0.0, image.width - 1.0);
      for (std::size_t c = 0; c < image.channels; ++c) out.at(c, y, x) = bilinear(image, c, sy, sx);
    }
  }
  return out;
}

Mask resize_nearest(const Mask& mask, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0 || mask.data.empty()) throw ContractError("resize to or from an empty mask");
  Mask out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = std::min(mask.height - 1, (2 * y + 1) * mask.height / (2 * height));
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = std::min(mask.width - 1, (2 * x + 1) * mask.width / (2 * width));
      out.at(y, x) = mask.at(sy, sx);
    }
  }
  return out;
}

Sample resize(const Sample& sample, std::size_t size) {
  if (sample.image.height != sample.mask.height || sample.image.width != sample.mask.width) {
    throw ShapeError("sample " + sample.id + ": image and mask sizes differ");
  }
  return {sample.id, resize_bilinear(sample.image, size, size), resize_nearest(sample.mask, size, size)};
}

Image color_balance(const Image& image) {
  std::vector<double> means(image.channels, 0.0);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t i = 0; i < image.plane(); ++i) means[c] += image.data[c * image.plane() + i];
    means[c] /= static_cast<double>(std::max<std::size_t>(image.plane(), 1));
  }
  double gray = 0.0;
  for (double m : means) gray += m;
  gray /= static_cast<double>(std::max<std::size_t>(image.channels, 1));
  Image out = image;
  for (std::size_t c = 0; c < image.channels; ++c) {
    if (means[c] == 0.0) {
      log::info("color balance: channel " + std::to_string(c) + " is all zero, left unscaled");
      continue;
    }
    const double scale = gray / means[c];
    for (std::size_t i = 0; i < image.plane(); ++i) {
      float& v = out.data[c * image.plane() + i];
      v = static_cast<float>(std::clamp(v * scale, 0.0, 1.0));
    }
  }
  return out;
}

void AugmentParams::validate() const {
  if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= 180.0)) {
    throw ConfigError("augment.max_rotation must lie in [0, 180]");
  }
  if (!(max_zoom >= 1.0)) throw ConfigError("augment.max_zoom must be >= 1");
  if (!(max_brightness >= 0.0 && max_brightness < 0.5)) throw ConfigError("augment.brightness must lie in [0, 0.5)");
  if (!(max_contrast >= 0.0 && max_contrast < 1.0)) throw ConfigError("augment.contrast must lie in [0, 1)");
}

AugmentParams AugmentParams::none() {
  AugmentParams p;
  p.dihedral = p.rotation = p.zoom = p.lighting = false;
  return p;
}

int dihedral_inverse(int element) {
  if (element < 0 || element >= 8) throw ContractError("dihedral element out of range");
  return element >= 4 ? element : (4 - element) % 4;
}

Sample apply_geometry(const Sample& sample, const GeometricTransform& transform) {
  if (transform.dihedral < 0 || transform.dihedral >= 8) throw ContractError("dihedral element out of range");
  if (!(transform.zoom > 0.0)) throw ContractError("zoom must be positive");
  if (sample.image.height != sample.mask.height || sample.image.width != sample.mask.width) {
    throw ShapeError("sample " + sample.id + ": image and mask sizes differ");
  }
  if (transform.is_identity()) return sample;
  const std::size_t h = sample.image.height, w = sample.image.width;
  if (h != w && transform.dihedral % 2 == 1) {
    throw ContractError("quarter-turn transforms need a square sample");
  }

  const double theta = transform.rotation_deg * std::numbers::pi / 180.0;
  const Matrix rotation{std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta)};
  Matrix forward = multiply(rotation, dihedral_matrix(transform.dihedral));
  for (double& v : forward) v *= transform.zoom;
  const double det = forward[0] * forward[3] - forward[1] * forward[2];
  const Matrix inverse{forward[3] / det, -forward[1] / det, -forward[2] / det, forward[0] / det};

  const double cx = (w - 1.0) / 2.0, cy = (h - 1.0) / 2.0;
  Sample out{sample.id, Image(sample.image.channels, h, w), Mask(h, w)};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double sx = reflect(cx + inverse[0] * dx + inverse[1] * dy, w - 1.0);
      const double sy = reflect(cy + inverse[2] * dx + inverse[3] * dy, h - 1.0);
      for (std::size_t c = 0; c < sample.image.channels; ++c) out.image.at(c, y, x) = bilinear(sample.image, c, sy, sx);
      out.mask.at(y, x) = sample.mask.at(static_cast<std::size_t>(std::lround(sy)),
                                         static_cast<std::size_t>(std::lround(sx)));
    }
  }
  return out;
}

Image apply_lighting(const Image& image, double brightness, double contrast) {
  Image out = image;
  for (float& v : out.data) v = static_cast<float>(std::clamp((v - 0.5) * contrast + 0.5 + brightness, 0.0, 1.0));
  return out;
}

Sample augment(const Sample& sample, const AugmentParams& params, std::mt19937_64& rng) {
  params.validate();
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  GeometricTransform t;
  if (params.dihedral) {
    const bool square = sample.image.height == sample.image.width;
    const int pick = std::uniform_int_distribution<int>(0, square ? 7 : 3)(rng);
    t.dihedral = square ? pick : std::array<int, 4>{0, 2, 4, 6}[pick];
  }
  if (params.rotation) t.rotation_deg = params.max_rotation_deg * unit(rng);
  if (params.zoom) t.zoom = std::uniform_real_distribution<double>(1.0, params.max_zoom)(rng);
  Sample out = apply_geometry(sample, t);
  if (params.lighting) {
    const double brightness = params.max_brightness * unit(rng);
    const double contrast = 1.0 + params.max_contrast * unit(rng);
    out.image = apply_lighting(out.image, brightness, contrast);
  }
  return out;
}

Sample augment(const Sample& sample, const AugmentParams& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return augment(sample, params, rng);
}

std::uint64_t augmentation_seed(std::uint64_t seed, std::string_view id, std::uint64_t epoch) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  mix(seed);
  for (char c : id) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  mix(epoch);
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return h;
}

}  // namespace unetseg
