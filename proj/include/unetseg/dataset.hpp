#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unetseg/image.hpp"
#include "unetseg/tensor.hpp"

namespace unetseg {

/// Reads an RGB image and its grayscale mask. Mask pixels >= 128 become 1;
/// values other than 0 and 255 are reported with a warning.
Sample load_sample(const std::string& id, const std::filesystem::path& image_path,
                   const std::filesystem::path& mask_path);

/// Dataset directory layout: images/<id>.png and masks/<id>.png.
struct DatasetLayout {
  std::filesystem::path root;
  std::filesystem::path image_path(const std::string& id) const { return root / "images" / (id + ".png"); }
  std::filesystem::path mask_path(const std::string& id) const { return root / "masks" / (id + ".png"); }
};

/// Sorted ids of images/*.png. Throws DataError when the directory is missing or empty.
std::vector<std::string> list_image_ids(const std::filesystem::path& root);

struct LoadOptions {
  std::optional<std::size_t> size;
  bool color_balance = false;
};

/// Loads every listed image with its mask; a missing mask raises DataError
/// naming the id.
std::vector<Sample> load_dataset(const std::filesystem::path& root, const LoadOptions& options = {});
std::vector<Sample> load_dataset(const std::filesystem::path& root, const std::vector<std::string>& ids,
                                 const LoadOptions& options = {});

/// Applies the load-time preprocessing (resize, colour balance) to one sample.
Sample preprocess(const Sample& sample, const LoadOptions& options);

struct FoldSplit {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::size_t>> assignment;

  std::vector<std::string> validation_ids(std::size_t fold) const;
  std::vector<std::string> training_ids(std::size_t fold) const;
  std::size_t fold_size(std::size_t fold) const;
};

/// Shuffles the ids with the seed and deals them round-robin into k folds.
FoldSplit kfold_split(const std::vector<std::string>& ids, std::size_t k, std::uint64_t seed);

/// CSV with header id,fold.
void write_split_csv(const FoldSplit& split, const std::filesystem::path& path);
FoldSplit read_split_csv(const std::filesystem::path& path);

/// Stacks samples into an [N, C, H, W] image batch and an [N, 1, H, W] 0/1 target batch.
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> make_batch(std::span<const Sample* const> samples);

template <typename Real>
Tensor<Real> image_batch(std::span<const Image* const> images);

}  // namespace unetseg
