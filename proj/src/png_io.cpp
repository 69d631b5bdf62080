#include "unetseg/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "unetseg/error.hpp"

namespace unetseg {

namespace {

struct ReadImage {
  png_image image{};
  std::string path;

  explicit ReadImage(const std::filesystem::path& p) : path(p.string()) {
    image.version = PNG_IMAGE_VERSION;
    if (!std::filesystem::exists(p)) throw IoError("no such file: " + path);
    if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
      throw IoError("cannot read PNG " + path + ": " + image.message);
    }
  }
  ~ReadImage() { png_image_free(&image); }
  ReadImage(const ReadImage&) = delete;
  ReadImage& operator=(const ReadImage&) = delete;

  template <typename T>
  std::vector<T> finish(png_uint_32 format) {
    image.format = format;
    std::vector<T> buffer(PNG_IMAGE_SIZE(image) / sizeof(T));
    if (png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr) == 0) {
      throw IoError("cannot decode PNG " + path + ": " + image.message);
    }
    return buffer;
  }
};

void write_raw(png_uint_32 format, std::size_t height, std::size_t width, const void* pixels,
               const std::filesystem::path& path) {
  if (height == 0 || width == 0) throw ContractError("cannot write an empty image to " + path.string());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.format = format;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const int ok = png_image_write_to_file(&image, path.string().c_str(), 0, pixels, 0, nullptr);
  const std::string message = image.message;
  png_image_free(&image);
  if (ok == 0) throw IoError("cannot write PNG " + path.string() + ": " + message);
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

Image read_png_rgb(const std::filesystem::path& path) {
  ReadImage reader(path);
  if (reader.image.format & PNG_FORMAT_FLAG_ALPHA) {
    throw DataError(path.string() + ": images with an alpha channel are not supported");
  }
  const std::size_t h = reader.image.height, w = reader.image.width;
  auto pixels = reader.finish<std::uint8_t>(PNG_FORMAT_RGB);
  Image out(3, h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = pixels[(y * w + x) * 3 + c] / 255.0f;
    }
  }
  return out;
}

void write_png_rgb(const Image& image, const std::filesystem::path& path) {
  if (image.channels == 1) {
    std::vector<std::uint8_t> pixels(image.plane());
    std::transform(image.data.begin(), image.data.end(), pixels.begin(), to_byte);
    write_raw(PNG_FORMAT_GRAY, image.height, image.width, pixels.data(), path);
    return;
  }
  if (image.channels != 3) throw ContractError("write_png_rgb expects 1 or 3 channels");
  std::vector<std::uint8_t> pixels(image.plane() * 3);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) pixels[(y * image.width + x) * 3 + c] = to_byte(image.at(c, y, x));
    }
  }
  write_raw(PNG_FORMAT_RGB, image.height, image.width, pixels.data(), path);
}

GrayPlane read_png_gray(const std::filesystem::path& path) {
  ReadImage reader(path);
  if (reader.image.format & PNG_FORMAT_FLAG_COLOR) {
    throw DataError(path.string() + ": mask must be a grayscale PNG");
  }
  GrayPlane plane;
  plane.height = reader.image.height;
  plane.width = reader.image.width;
  plane.data = reader.finish<std::uint8_t>(PNG_FORMAT_GRAY);
  return plane;
}

void write_png_mask(const Mask& mask, const std::filesystem::path& path) {
  std::vector<std::uint8_t> pixels(mask.data.size());
  std::transform(mask.data.begin(), mask.data.end(), pixels.begin(),
                 [](std::uint8_t v) -> std::uint8_t { return v ? 255 : 0; });
  write_raw(PNG_FORMAT_GRAY, mask.height, mask.width, pixels.data(), path);
}

void write_png_probability(const Image& probability, const std::filesystem::path& path) {
  if (probability.channels != 1) throw ContractError("probability maps have one channel");
  std::vector<std::uint16_t> pixels(probability.plane());
  std::transform(probability.data.begin(), probability.data.end(), pixels.begin(), [](float p) {
    return static_cast<std::uint16_t>(std::lround(std::clamp(static_cast<double>(p), 0.0, 1.0) * 65535.0));
  });
  write_raw(PNG_FORMAT_LINEAR_Y, probability.height, probability.width, pixels.data(), path);
}

Image read_png_probability(const std::filesystem::path& path) {
  ReadImage reader(path);
  const std::size_t h = reader.image.height, w = reader.image.width;
  auto pixels = reader.finish<std::uint16_t>(PNG_FORMAT_LINEAR_Y);
  Image out(1, h, w);
  for (std::size_t i = 0; i < pixels.size(); ++i) out.data[i] = static_cast<float>(pixels[i] / 65535.0);
  return out;
}

}  // namespace unetseg
